/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_get_meshpreview_area: (a: number) => number;
export const __wbg_get_meshpreview_euler: (a: number) => number;
export const __wbg_get_meshpreview_volume: (a: number) => number;
export const __wbg_get_meshpreview_watertight: (a: number) => number;
export const __wbg_get_stylised_height: (a: number) => number;
export const __wbg_get_stylised_width: (a: number) => number;
export const __wbg_heatmap_free: (a: number, b: number) => void;
export const __wbg_meshpreview_free: (a: number, b: number) => void;
export const __wbg_stylised_free: (a: number, b: number) => void;
export const attention_heatmap: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
export const heatmap_cols: (a: number) => number;
export const heatmap_entropy: (a: number) => [number, number];
export const heatmap_rows: (a: number) => number;
export const heatmap_weights: (a: number) => [number, number];
export const meshpreview_indices: (a: number) => [number, number];
export const meshpreview_positions: (a: number) => [number, number];
export const sphere_mesh: (a: number, b: number, c: number) => [number, number, number];
export const stylise: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: bigint) => [number, number, number];
export const stylised_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
