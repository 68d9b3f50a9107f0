/* tslint:disable */
/* eslint-disable */

export class Heatmap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly cols: number;
    /**
     * Per-row entropy in nats.
     */
    readonly entropy: Float64Array;
    readonly rows: number;
    /**
     * Row-major, each row sums to 1.
     */
    readonly weights: Float64Array;
}

export class MeshPreview {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly area: number;
    readonly euler: number;
    readonly volume: number;
    readonly watertight: boolean;
    /**
     * Triangle vertex indices.
     */
    readonly indices: Uint32Array;
    /**
     * xyz triples.
     */
    readonly positions: Float32Array;
}

export class Stylised {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly height: number;
    readonly width: number;
    /**
     * RGBA of the 3×2 view tile, ready for `ImageData`.
     */
    readonly rgba: Uint8Array;
}

/**
 * Fused attention weights for seeded random queries and keys. The
 * preserve-queries are a perturbation of the content queries, so β moves
 * the pattern smoothly.
 */
export function attention_heatmap(queries: number, keys: number, dim: number, beta_c: number, lambda: number, seed: bigint): Heatmap;

/**
 * Extracts the zero level of a sphere whose radius is modulated by
 * `wobble · sin(3x) sin(3y) sin(3z)`.
 */
export function sphere_mesh(res: number, radius: number, wobble: number): MeshPreview;

/**
 * Six stylised views from the toy backend. Inputs are raw RGBA buffers as
 * read from a canvas.
 */
export function stylise(content: Uint8Array, content_w: number, content_h: number, style: Uint8Array, style_w: number, style_h: number, beta_c: number, lambda: number, steps: number, seed: bigint): Stylised;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_get_meshpreview_area: (a: number) => number;
    readonly __wbg_get_meshpreview_euler: (a: number) => number;
    readonly __wbg_get_meshpreview_volume: (a: number) => number;
    readonly __wbg_get_meshpreview_watertight: (a: number) => number;
    readonly __wbg_get_stylised_height: (a: number) => number;
    readonly __wbg_get_stylised_width: (a: number) => number;
    readonly __wbg_heatmap_free: (a: number, b: number) => void;
    readonly __wbg_meshpreview_free: (a: number, b: number) => void;
    readonly __wbg_stylised_free: (a: number, b: number) => void;
    readonly attention_heatmap: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly heatmap_cols: (a: number) => number;
    readonly heatmap_entropy: (a: number) => [number, number];
    readonly heatmap_rows: (a: number) => number;
    readonly heatmap_weights: (a: number) => [number, number];
    readonly meshpreview_indices: (a: number) => [number, number];
    readonly meshpreview_positions: (a: number) => [number, number];
    readonly sphere_mesh: (a: number, b: number, c: number) => [number, number, number];
    readonly stylise: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number, k: number, l: bigint) => [number, number, number];
    readonly stylised_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
