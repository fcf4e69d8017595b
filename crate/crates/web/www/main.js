import init, {
  class_names, grid_side, heatmap_rgba, image_side, kernel, shapley, true_class, Stepper,
} from "./pkg/flipside_web.js";

const $ = (id) => document.getElementById(id);

function paint(canvas, values, side) {
  const px = heatmap_rgba(Float64Array.from(values), side, side);
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(px), side, side), 0, 0);
}

function cellAt(canvas, event, side) {
  const r = canvas.getBoundingClientRect();
  const j = Math.floor(((event.clientX - r.left) / r.width) * side);
  const i = Math.floor(((event.clientY - r.top) / r.height) * side);
  return [Math.min(Math.max(i, 0), side - 1), Math.min(Math.max(j, 0), side - 1)];
}

await init();
const n = grid_side();
const names = class_names();

// kernel explorer
let centre = [3, 3];
function drawKernel() {
  const sigma = Number($("k-sigma").value);
  $("k-sigma-v").textContent = sigma.toFixed(2);
  const g = kernel(sigma, centre[0], centre[1]);
  paint($("k-kernel"), g, n);
  paint($("k-mask"), g.map((v) => 1 - v), n);
}
$("k-sigma").addEventListener("input", drawKernel);
$("k-kernel").addEventListener("click", (e) => { centre = cellAt($("k-kernel"), e, n); drawKernel(); });
drawKernel();

// contribution map
names.forEach((name, k) => $("s-class").add(new Option(name, k)));
function drawShapley() {
  const sigma = Number($("s-sigma").value);
  $("s-sigma-v").textContent = sigma.toFixed(2);
  const s = shapley(sigma, Number($("s-class").value), $("s-logit").checked);
  paint($("s-map"), s.map((v) => Math.max(v, 0)), n);
  let best = 0;
  s.forEach((v, k) => { if (v > s[best]) best = k; });
  const total = s.reduce((a, b) => a + b, 0);
  $("s-stats").textContent =
    `peak ${s[best].toFixed(4)} at (${Math.floor(best / n)}, ${best % n})\nsum ${total.toFixed(4)}`;
}
["s-sigma", "s-class", "s-logit"].forEach((id) => $(id).addEventListener("input", drawShapley));
drawShapley();

// counterfactual stepper
let stepper = null;
function drawStep() {
  const t = Number($("c-step").value);
  $("c-step-v").textContent = `${t} / ${stepper.steps()}`;
  paint($("c-energy"), stepper.energy(t), n);
  const p = stepper.probabilities(t);
  $("c-probs").innerHTML = "<tr><th>class</th><th>p</th></tr>" + names
    .map((name, k) => `<tr><td>${name}${k === true_class() ? " (true)" : ""}</td><td>${p[k].toFixed(3)}</td></tr>`)
    .join("");
  const s = stepper.step(t);
  $("c-status").textContent = s.length
    ? `step ${t}: cell (${s[0]}, ${s[1]}) takes reference ${s[2]}'s column at (${s[3]}, ${s[4]})`
    : "original features";
}
function search() {
  if (stepper) stepper.free();
  try {
    stepper = new Stepper(Number($("c-sigma").value), Number($("c-topm").value), 100);
  } catch (err) {
    $("c-status").textContent = String(err);
    return;
  }
  $("c-step").max = stepper.steps();
  $("c-step").value = 0;
  const m = image_side();
  paint($("c-inv"), stepper.invariant(), m);
  paint($("c-dom"), stepper.dominant(), m);
  drawStep();
  if (!stepper.success()) $("c-status").textContent += " (no flip within 100 steps)";
}
$("c-run").addEventListener("click", search);
$("c-step").addEventListener("input", drawStep);
search();
