import init, { roc_explorer, synthetic_timeline, kappa } from "./pkg/stancetrack_wasm.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";
const COLOURS = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#7f8c8d"];

function el(name, attrs, parent) {
  const node = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  parent.appendChild(node);
  return node;
}

function clear(svg) {
  while (svg.firstChild) svg.removeChild(svg.firstChild);
}

function fail(out, e) {
  out.textContent = String(e);
  out.className = "out err";
}

function drawRoc() {
  $("roc-sep-v").textContent = $("roc-sep").value;
  $("roc-share-v").textContent = $("roc-share").value;
  const out = $("roc-out");
  const svg = $("roc-plot");
  clear(svg);
  let v;
  try {
    v = JSON.parse(roc_explorer(+$("roc-n").value, +$("roc-sep").value, +$("roc-share").value, BigInt($("roc-seed").value)));
  } catch (e) {
    return fail(out, e);
  }
  const size = 360, pad = 30, span = size - 2 * pad;
  const x = (f) => pad + f * span;
  const y = (t) => size - pad - t * span;
  el("rect", { x: pad, y: pad, width: span, height: span, fill: "none", stroke: "#999" }, svg);
  el("line", { x1: x(0), y1: y(0), x2: x(1), y2: y(1), stroke: "#ccc", "stroke-dasharray": "4 4" }, svg);
  const path = v.points.map((p, i) => `${i ? "L" : "M"}${x(p.fpr).toFixed(1)},${y(p.tpr).toFixed(1)}`).join(" ");
  el("path", { d: path, fill: "none", stroke: COLOURS[1], "stroke-width": 2 }, svg);
  el("circle", { cx: x(0), cy: y(v.tpr_at_zero_fpr), r: 5, fill: COLOURS[0] }, svg);
  el("text", { x: size / 2, y: size - 6, "text-anchor": "middle" }, svg).textContent = "false positive rate";
  el("text", { x: 10, y: size / 2, transform: `rotate(-90 10 ${size / 2})`, "text-anchor": "middle" }, svg).textContent = "true positive rate";
  out.className = "out";
  out.textContent =
    `positives ${v.positives}, negatives ${v.negatives}\n` +
    `AUC (trapezoid) ${v.auc_trapezoid.toFixed(6)}\nAUC (rank)      ${v.auc_rank.toFixed(6)}\n` +
    `zero-FPR threshold ${v.threshold === null ? "none" : v.threshold.toFixed(4)}, TPR ${v.tpr_at_zero_fpr.toFixed(3)}`;
}

function drawLines(svg, lines, markers, yMax, label) {
  clear(svg);
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height"), pad = 34;
  const days = [...new Set(lines.flatMap((l) => l.days))].sort();
  if (!days.length) return;
  const index = new Map(days.map((d, i) => [d, i]));
  const x = (d) => pad + (index.get(d) / Math.max(1, days.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - (v / yMax) * (h - 2 * pad);
  el("line", { x1: pad, y1: y(0), x2: w - pad, y2: y(0), stroke: "#999" }, svg);
  el("text", { x: 4, y: pad - 8 }, svg).textContent = `${label} (max ${yMax.toFixed(2)})`;
  for (const [day, caption] of markers) {
    if (!index.has(day)) continue;
    el("line", { x1: x(day), y1: pad, x2: x(day), y2: h - pad, stroke: "#aaa", "stroke-dasharray": "2 3" }, svg);
    el("text", { x: x(day) + 3, y: pad + 10, "font-size": 10 }, svg).textContent = caption;
  }
  lines.forEach((l, k) => {
    const d = l.days.map((day, i) => `${i ? "L" : "M"}${x(day).toFixed(1)},${y(l.values[i]).toFixed(1)}`).join(" ");
    el("path", { d, fill: "none", stroke: COLOURS[k % COLOURS.length], "stroke-width": 1.8 }, svg);
    el("text", { x: w - pad - 110, y: pad + 14 * k, fill: COLOURS[k % COLOURS.length], "font-size": 11 }, svg).textContent = l.name;
  });
  el("text", { x: pad, y: h - 8, "font-size": 10 }, svg).textContent = days[0];
  el("text", { x: w - pad, y: h - 8, "font-size": 10, "text-anchor": "end" }, svg).textContent = days[days.length - 1];
}

function drawTimeline() {
  const out = $("tl-out");
  let v;
  try {
    v = JSON.parse(synthetic_timeline(+$("tl-posts").value, BigInt($("tl-seed").value), $("tl-topic").value, +$("tl-window").value, $("tl-drop").checked));
  } catch (e) {
    clear($("tl-rate"));
    clear($("tl-stance"));
    return fail(out, e);
  }
  const rateMax = Math.max(0.01, ...v.topic_rate.flatMap((l) => l.values));
  drawLines($("tl-rate"), v.topic_rate, v.markers, rateMax, "share of relevant posts");
  drawLines($("tl-stance"), v.stances, v.markers, 1, "stance fractions");
  out.className = "out";
  out.textContent = `${v.topic_rate[0]?.days.length ?? 0} days, ${v.stances.length} stance series`;
}

function computeKappa() {
  const out = $("k-out");
  try {
    const v = JSON.parse(kappa($("k-a").value, $("k-b").value));
    out.className = "out";
    out.textContent = `${v.items} items, agreement ${(100 * v.percent_agreement).toFixed(1)}%, kappa ${v.kappa.toFixed(4)}`;
  } catch (e) {
    fail(out, e);
  }
}

await init();
for (const id of ["roc-n", "roc-sep", "roc-share", "roc-seed"]) $(id).addEventListener("input", drawRoc);
for (const id of ["tl-posts", "tl-topic", "tl-window", "tl-drop", "tl-seed"]) $(id).addEventListener("change", drawTimeline);
for (const id of ["k-a", "k-b"]) $(id).addEventListener("input", computeKappa);
drawRoc();
drawTimeline();
computeKappa();
