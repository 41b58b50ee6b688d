import init, { trajectory, gain_curves, density_map } from "./pkg/hubble_demo.js";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const num = (id) => parseFloat(document.getElementById(id).value);

function call(f, outId) {
  const out = document.getElementById(outId);
  const data = JSON.parse(f());
  if (data.error) {
    out.textContent = data.error;
    out.className = "out err";
    return null;
  }
  out.className = "out";
  return data;
}

function extent(values) {
  let lo = Infinity, hi = -Infinity;
  for (const v of values) {
    if (Number.isFinite(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  }
  if (lo === hi) { lo -= 1; hi += 1; }
  return [lo, hi];
}

// Line plot of several series over a shared x axis.
function plotLines(canvas, x, series, yRange) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  ctx.clearRect(0, 0, w, h);
  const [x0, x1] = extent(x);
  const [y0, y1] = yRange || extent(series.flat());
  const px = (v) => pad + (v - x0) / (x1 - x0) * (w - 2 * pad);
  const py = (v) => h - pad - (v - y0) / (y1 - y0) * (h - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#333";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - 10);
  ctx.fillText(x1.toPrecision(3), w - pad - 20, h - 10);
  series.forEach((ys, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(px(x[i]), py(y)) : ctx.moveTo(px(x[i]), py(y))));
    ctx.stroke();
  });
}

function runTrajectory() {
  const d = call(() => trajectory(num("tr-rs"), num("tr-re"), num("tr-ti"), num("tr-rise"),
    num("tr-gh"), num("tr-phi"), 150), "tr-out");
  if (!d) return;
  const [lo, hi] = extent(d.dn);
  const [r0, r1] = extent(d.radius);
  // Radius rescaled onto the density axis.
  const scaled = d.radius.map((r) => lo + (r - r0) / (r1 - r0) * (hi - lo));
  plotLines(document.getElementById("tr-plot"), d.t, [d.dn, scaled]);
  document.getElementById("tr-out").textContent =
    `t_peak ${d.t_peak.toFixed(3)} ms   phi_peak/pi ${d.phi_peak_over_pi.toFixed(4)}   ` +
    `max |dR/dt|/R ${d.max_rate.toFixed(4)} /ms   rate/omega ${d.rate_over_omega.toFixed(4)}   ` +
    `A_f/A_i ${d.ratio.toFixed(4)}   (red: R, rescaled)`;
}

function runCurves() {
  const d = call(() => gain_curves(document.getElementById("gc-list").value, num("gc-n"),
    document.getElementById("gc-undamped").checked), "gc-out");
  if (!d) return;
  const flat = d.phi_over_pi.map(() => d.adiabatic);
  plotLines(document.getElementById("gc-plot"), d.phi_over_pi, [...d.ratio, flat]);
  const lines = d.gamma_h.map((g, k) => {
    const r = d.ratio[k];
    const mean = r.reduce((a, b) => a + b, 0) / r.length;
    return `gamma_H ${g}: mean ${mean.toFixed(4)}  peak-to-trough ` +
      `${((Math.max(...r) - Math.min(...r)) / mean).toFixed(3)}`;
  });
  lines.push(`adiabatic ${d.adiabatic.toFixed(4)} (last colour)`);
  document.getElementById("gc-out").textContent = lines.join("\n");
}

function runDensity() {
  const d = call(() => density_map(num("dm-ti"), num("dm-noise"), num("dm-seed"),
    num("dm-bins"), num("dm-n")), "dm-out");
  if (!d) return;
  const canvas = document.getElementById("dm-plot");
  const ctx = canvas.getContext("2d");
  const cw = canvas.width / d.n_t, ch = canvas.height / d.n_theta;
  for (let i = 0; i < d.n_t; i++) {
    for (let j = 0; j < d.n_theta; j++) {
      const v = d.values[i * d.n_theta + j] / d.max_abs;
      const a = Math.round(255 * (1 - Math.abs(v)));
      ctx.fillStyle = v >= 0 ? `rgb(255,${a},${a})` : `rgb(${a},${a},255)`;
      ctx.fillRect(i * cw, j * ch, Math.ceil(cw), Math.ceil(ch));
    }
  }
  document.getElementById("dm-out").textContent =
    `time runs left to right over 0..150 ms, theta top to bottom; max |dn| ${d.max_abs.toPrecision(4)}`;
}

await init();
document.getElementById("tr-run").onclick = runTrajectory;
document.getElementById("gc-run").onclick = runCurves;
document.getElementById("dm-run").onclick = runDensity;
runTrajectory();
runCurves();
runDensity();
