import init, { smooth, fpca, impute_and_pool } from "./pkg/fregmice_web.js";

const NS = "http://www.w3.org/2000/svg";
const W = 720, H = 320, M = { l: 48, r: 130, t: 14, b: 28 };
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

function el(name, attrs, parent) {
  const e = document.createElementNS(NS, name);
  for (const [k, v] of Object.entries(attrs)) e.setAttribute(k, v);
  if (parent) parent.appendChild(e);
  return e;
}

function extent(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  if (!Number.isFinite(lo)) return [0, 1];
  if (hi - lo < 1e-12) return [lo - 1, hi + 1];
  const pad = 0.05 * (hi - lo);
  return [lo - pad, hi + pad];
}

function ticks(lo, hi) {
  const raw = (hi - lo) / 5, mag = 10 ** Math.floor(Math.log10(raw)), r = raw / mag;
  const step = (r < 1.5 ? 1 : r < 3 ? 2 : r < 7 ? 5 : 10) * mag;
  const out = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push(Math.abs(v) < 1e-9 * step ? 0 : v);
  return out;
}

// layers: {kind: "line"|"points"|"band", x, y, y2?, color, label?, width?, opacity?}
function draw(svg, layers) {
  svg.replaceChildren();
  const xs = layers.flatMap(l => l.x);
  const ys = layers.flatMap(l => l.y2 ? [...l.y, ...l.y2] : l.y);
  const [x0, x1] = extent(xs), [y0, y1] = extent(ys);
  const pw = W - M.l - M.r, ph = H - M.t - M.b;
  const sx = x => M.l + (x - x0) / (x1 - x0) * pw;
  const sy = y => M.t + (y1 - y) / (y1 - y0) * ph;
  el("rect", { x: M.l, y: M.t, width: pw, height: ph, fill: "none", stroke: "#999" }, svg);
  for (const t of ticks(x0, x1)) {
    el("line", { x1: sx(t), x2: sx(t), y1: M.t + ph, y2: M.t + ph + 4, stroke: "#999" }, svg);
    el("text", { x: sx(t), y: H - 8, "text-anchor": "middle", "font-size": 11 }, svg).textContent = +t.toFixed(4);
  }
  for (const t of ticks(y0, y1)) {
    el("line", { x1: M.l - 4, x2: M.l, y1: sy(t), y2: sy(t), stroke: "#999" }, svg);
    el("text", { x: M.l - 6, y: sy(t) + 4, "text-anchor": "end", "font-size": 11 }, svg).textContent = +t.toFixed(4);
  }
  let legend = 0;
  for (const l of layers) {
    if (l.kind === "band") {
      const top = l.x.map((x, i) => `${sx(x)},${sy(l.y2[i])}`);
      const bottom = l.x.map((x, i) => `${sx(x)},${sy(l.y[i])}`).reverse();
      el("polygon", { points: [...top, ...bottom].join(" "), fill: l.color, "fill-opacity": l.opacity ?? 0.15, stroke: "none" }, svg);
    } else if (l.kind === "points") {
      for (let i = 0; i < l.x.length; i++) el("circle", { cx: sx(l.x[i]), cy: sy(l.y[i]), r: 1.8, fill: l.color, "fill-opacity": 0.5 }, svg);
    } else {
      const pts = l.x.map((x, i) => `${sx(x)},${sy(l.y[i])}`).join(" ");
      el("polyline", { points: pts, fill: "none", stroke: l.color, "stroke-width": l.width ?? 1.6, "stroke-opacity": l.opacity ?? 1, "stroke-dasharray": l.dash ?? "" }, svg);
    }
    if (l.label) {
      const y = M.t + 10 + 16 * legend++;
      el("rect", { x: W - M.r + 10, y: y - 5, width: 12, height: 6, fill: l.color }, svg);
      el("text", { x: W - M.r + 28, y: y + 2, "font-size": 11 }, svg).textContent = l.label;
    }
  }
}

function values(form) {
  const out = {};
  for (const input of form.querySelectorAll("input, select")) {
    out[input.name] = input.type === "checkbox" ? input.checked : Number(input.value);
    const o = input.parentElement.querySelector("output");
    if (o) o.textContent = input.value;
  }
  return out;
}

function guard(section, fn) {
  const caption = section.querySelector(".caption");
  try {
    caption.classList.remove("error");
    fn(caption);
  } catch (e) {
    caption.classList.add("error");
    caption.textContent = String(e.message ?? e);
  }
}

function runSmooth() {
  const s = document.getElementById("smooth");
  const v = values(s.querySelector("form"));
  s.querySelector("[name=lambda]").disabled = v.reml;
  guard(s, caption => {
    const r = JSON.parse(smooth(v.seed, v.points, v.noise, v.basis, v.reml ? undefined : v.lambda));
    draw(s.querySelector("svg"), [
      { kind: "band", x: r.t, y: r.lower, y2: r.upper, color: COLORS[0], label: "95% band" },
      { kind: "points", x: r.t, y: r.observed, color: "#777", label: "observed" },
      { kind: "line", x: r.t, y: r.truth, color: COLORS[1], dash: "5 3", label: "truth" },
      { kind: "line", x: r.t, y: r.fit, color: COLORS[0], width: 2.2, label: "fit" },
    ]);
    caption.textContent = `λ = ${r.lambda.toExponential(3)}, effective degrees of freedom ${r.edf.toFixed(2)}`;
  });
}

function runFpca() {
  const s = document.getElementById("fpca");
  const v = values(s.querySelector("form"));
  guard(s, caption => {
    const r = JSON.parse(fpca(v.seed, v.curves, v.pve, v.draws));
    draw(s.querySelector("[data-role=curves]"), [
      ...r.sample.map((c, i) => ({ kind: "line", x: r.t, y: c, color: "#999", width: 1, opacity: 0.6, label: i === 0 ? "data" : undefined })),
      ...r.draws.map((c, i) => ({ kind: "line", x: r.t, y: c, color: COLORS[3], width: 1, opacity: 0.8, label: i === 0 ? "draws" : undefined })),
      { kind: "line", x: r.t, y: r.mean, color: COLORS[0], width: 2.4, label: "mean" },
    ]);
    draw(s.querySelector("[data-role=eigen]"), r.eigenfunctions.map((f, k) => (
      { kind: "line", x: r.t, y: f, color: COLORS[k % COLORS.length], label: `ψ${k + 1}` })));
    const est = r.eigenvalues.map(x => x.toFixed(3)).join(", ");
    caption.textContent = `${r.eigenvalues.length} components reach ${(100 * r.pve.at(-1)).toFixed(1)}% of the variance. ` +
      `Eigenvalues ${est} (generating values ${r.true_eigenvalues.join(", ")}).`;
  });
}

let poolResult = null;

function showPool() {
  const s = document.getElementById("pool");
  const j = Number(s.querySelector("[name=coef]").value);
  if (!poolResult) return;
  const c = poolResult.coefficients[j], t = poolResult.t;
  const mean = a => a.reduce((x, y) => x + y, 0) / a.length;
  const width = b => mean(b.upper.map((u, i) => u - b.lower[i]));
  const cover = b => mean(c.truth.map((v, i) => (b.lower[i] <= v && v <= b.upper[i]) ? 1 : 0));
  draw(s.querySelector("svg"), [
    { kind: "band", x: t, y: c.imputed.lower, y2: c.imputed.upper, color: COLORS[0] },
    { kind: "band", x: t, y: c.complete_cases.lower, y2: c.complete_cases.upper, color: COLORS[1], opacity: 0.1 },
    { kind: "line", x: t, y: c.truth, color: "#000", dash: "5 3", label: "truth" },
    { kind: "line", x: t, y: c.complete.estimate, color: COLORS[2], label: "full data" },
    { kind: "line", x: t, y: c.complete_cases.estimate, color: COLORS[1], label: "complete cases" },
    { kind: "line", x: t, y: c.imputed.estimate, color: COLORS[0], width: 2.2, label: "imputed, pooled" },
  ]);
  const row = (name, b) => `${name}: mean width ${width(b).toFixed(3)}, covers truth at ${(100 * cover(b)).toFixed(0)}% of points`;
  s.querySelector(".caption").textContent = `${poolResult.rows_missing} rows lost z2. ` +
    [row("full data", c.complete), row("complete cases", c.complete_cases), row("imputed", c.imputed)].join("; ") + ".";
}

function runPool() {
  const s = document.getElementById("pool");
  const v = values(s.querySelector("form"));
  const caption = s.querySelector(".caption");
  caption.textContent = "Imputing…";
  // let the message paint before the synchronous work starts
  setTimeout(() => guard(s, () => {
    poolResult = JSON.parse(impute_and_pool(v.seed, v.n, v.missing, v.m, v.iterations));
    showPool();
  }), 20);
}

async function main() {
  await init();
  document.getElementById("status").textContent = "Ready. Controls update the plots as you change them.";
  document.querySelector("#smooth form").addEventListener("input", runSmooth);
  document.querySelector("#fpca form").addEventListener("input", runFpca);
  const pool = document.querySelector("#pool form");
  pool.querySelector("[name=run]").addEventListener("click", runPool);
  pool.querySelector("[name=coef]").addEventListener("change", showPool);
  pool.addEventListener("input", e => { if (e.target.name !== "coef") values(pool); });
  runSmooth();
  runFpca();
  runPool();
}

main().catch(e => {
  const s = document.getElementById("status");
  s.classList.add("error");
  s.textContent = `Failed to start: ${e}`;
});
