import init, { attention_heatmap, sphere_mesh, stylise } from "./pkg/style3d_web.js";

const $ = (id) => document.getElementById(id);
const fail = (e) => { $("error").textContent = String(e); };

function drawHeatmap() {
  const beta = +$("beta").value, lambda = +$("lambda").value;
  $("beta-v").textContent = `(${beta.toFixed(2)}, ${(1 - beta).toFixed(2)})`;
  $("lambda-v").textContent = lambda.toFixed(1);
  const h = attention_heatmap(16, 24, 8, beta, lambda, BigInt($("attn-seed").value || 0));
  const w = h.weights, rows = h.rows, cols = h.cols;
  const ctx = $("heatmap").getContext("2d");
  const cw = ctx.canvas.width / cols, ch = ctx.canvas.height / rows;
  for (let i = 0; i < rows; i++) {
    let max = 0;
    for (let j = 0; j < cols; j++) max = Math.max(max, w[i * cols + j]);
    for (let j = 0; j < cols; j++) {
      const v = Math.round(255 * (1 - w[i * cols + j] / max));
      ctx.fillStyle = `rgb(255,${v},${v})`;
      ctx.fillRect(j * cw, i * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  const e = h.entropy;
  $("entropy").textContent = (e.reduce((a, b) => a + b, 0) / e.length).toFixed(4);
}

let mesh = null, yaw = 0.6, pitch = 0.4;

function buildMesh() {
  const res = +$("res").value, wobble = +$("wobble").value;
  $("res-v").textContent = res;
  $("wobble-v").textContent = wobble.toFixed(2);
  const m = sphere_mesh(res, 0.6, wobble);
  mesh = { p: m.positions, f: m.indices };
  $("mesh-stats").textContent =
    `vertices ${m.positions.length / 3}\nfaces    ${m.indices.length / 3}\n` +
    `watertight ${m.watertight}\nχ ${m.euler}\nvolume ${m.volume.toFixed(4)}\narea   ${m.area.toFixed(4)}`;
  drawMesh();
}

function drawMesh() {
  const ctx = $("mesh").getContext("2d"), s = ctx.canvas.width / 2.4, c = ctx.canvas.width / 2;
  const [cy, sy, cp, sp] = [Math.cos(yaw), Math.sin(yaw), Math.cos(pitch), Math.sin(pitch)];
  const n = mesh.p.length / 3, q = new Float32Array(n * 3);
  for (let i = 0; i < n; i++) {
    const [x, y, z] = [mesh.p[3 * i], mesh.p[3 * i + 1], mesh.p[3 * i + 2]];
    const x1 = cy * x + sy * z, z1 = -sy * x + cy * z;
    q[3 * i] = x1; q[3 * i + 1] = cp * y - sp * z1; q[3 * i + 2] = sp * y + cp * z1;
  }
  const tris = [];
  for (let t = 0; t < mesh.f.length; t += 3) {
    const [a, b, d] = [mesh.f[t], mesh.f[t + 1], mesh.f[t + 2]];
    const ux = q[3 * b] - q[3 * a], uy = q[3 * b + 1] - q[3 * a + 1], uz = q[3 * b + 2] - q[3 * a + 2];
    const vx = q[3 * d] - q[3 * a], vy = q[3 * d + 1] - q[3 * a + 1], vz = q[3 * d + 2] - q[3 * a + 2];
    const nx = uy * vz - uz * vy, ny = uz * vx - ux * vz, nz = ux * vy - uy * vx;
    const len = Math.hypot(nx, ny, nz) || 1;
    tris.push({ a, b, d, z: q[3 * a + 2] + q[3 * b + 2] + q[3 * d + 2], shade: nz / len });
  }
  tris.sort((u, v) => u.z - v.z);
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  for (const t of tris) {
    if (t.shade <= 0) continue;
    const g = Math.round(60 + 180 * t.shade);
    ctx.fillStyle = ctx.strokeStyle = `rgb(${g},${Math.round(g * 0.8)},${Math.round(g * 0.7)})`;
    ctx.beginPath();
    for (const k of [t.a, t.b, t.d]) ctx.lineTo(c + s * q[3 * k], c - s * q[3 * k + 1]);
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }
}

function paintDefaults() {
  const c = $("content").getContext("2d");
  c.fillStyle = "#fff"; c.fillRect(0, 0, 96, 96);
  c.fillStyle = "#c33"; c.beginPath(); c.ellipse(48, 52, 30, 38, 0, 0, 2 * Math.PI); c.fill();
  const s = $("style").getContext("2d");
  for (let y = 0; y < 96; y++) for (let x = 0; x < 96; x++) {
    const a = Math.atan2(y - 48, x - 48) + Math.hypot(x - 48, y - 48) / 12;
    s.fillStyle = `hsl(${(a * 180 / Math.PI) % 360},70%,50%)`;
    s.fillRect(x, y, 1, 1);
  }
}

function loadInto(canvasId, file) {
  const img = new Image();
  img.onload = () => {
    const ctx = $(canvasId).getContext("2d");
    ctx.clearRect(0, 0, 96, 96);
    ctx.drawImage(img, 0, 0, 96, 96);
    URL.revokeObjectURL(img.src);
  };
  img.src = URL.createObjectURL(file);
}

function pixels(id) {
  const ctx = $(id).getContext("2d");
  return ctx.getImageData(0, 0, ctx.canvas.width, ctx.canvas.height);
}

function runStylise() {
  $("status").textContent = "running...";
  setTimeout(() => {
    try {
      const c = pixels("content"), s = pixels("style");
      const t0 = performance.now();
      const out = stylise(new Uint8Array(c.data.buffer), c.width, c.height,
        new Uint8Array(s.data.buffer), s.width, s.height,
        +$("beta").value, +$("lambda").value, +$("steps").value, 42n);
      const canvas = $("views");
      canvas.width = out.width; canvas.height = out.height;
      canvas.style.width = `${out.width * 2}px`;
      canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(out.rgba), out.width, out.height), 0, 0);
      $("status").textContent = `${((performance.now() - t0) / 1000).toFixed(1)} s, β and λ from the sliders above`;
    } catch (e) { fail(e); $("status").textContent = ""; }
  }, 10);
}

await init();
try {
  for (const id of ["beta", "lambda", "attn-seed"]) $(id).addEventListener("input", drawHeatmap);
  for (const id of ["res", "wobble"]) $(id).addEventListener("input", buildMesh);
  let drag = null;
  $("mesh").addEventListener("pointerdown", (e) => { drag = [e.clientX, e.clientY]; });
  window.addEventListener("pointerup", () => { drag = null; });
  window.addEventListener("pointermove", (e) => {
    if (!drag) return;
    yaw += (e.clientX - drag[0]) * 0.01;
    pitch += (e.clientY - drag[1]) * 0.01;
    drag = [e.clientX, e.clientY];
    drawMesh();
  });
  $("content-file").addEventListener("change", (e) => e.target.files[0] && loadInto("content", e.target.files[0]));
  $("style-file").addEventListener("change", (e) => e.target.files[0] && loadInto("style", e.target.files[0]));
  $("go").addEventListener("click", runStylise);
  paintDefaults();
  drawHeatmap();
  buildMesh();
} catch (e) { fail(e); }
