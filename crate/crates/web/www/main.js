import init, { fan_json, index_sweep_json, zermelo_json } from "./pkg/fbt_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function frame(canvas, lo, hi) {
  // square world window [lo, hi]² mapped onto the canvas, y up
  const ctx = canvas.getContext("2d");
  const s = Math.min(canvas.width, canvas.height) / (hi - lo);
  const ox = (canvas.width - s * (hi - lo)) / 2;
  const to = ([x, y]) => [ox + (x - lo) * s, canvas.height - (y - lo) * s];
  const from = (px, py) => [lo + (px - ox) / s, lo + (canvas.height - py) / s];
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#eee";
  ctx.beginPath();
  for (let v = Math.ceil(lo); v <= hi; v++) {
    ctx.moveTo(...to([v, lo])); ctx.lineTo(...to([v, hi]));
    ctx.moveTo(...to([lo, v])); ctx.lineTo(...to([hi, v]));
  }
  ctx.stroke();
  return { ctx, to, from };
}

function polyline(ctx, to, pts, color, width = 1) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  pts.forEach((p, i) => (i ? ctx.lineTo(...to(p)) : ctx.moveTo(...to(p))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function dot(ctx, to, p, color, r = 4) {
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(...to(p), r, 0, 2 * Math.PI);
  ctx.fill();
}

function report(id, text, bad = false) {
  $(id).textContent = text;
  $(id).className = bad ? "out err" : "out";
}

const FAN_STARTS = { sphere: [0, -1], warped: [-1, 0], randers: [-1.5, 0] };

function drawFan() {
  const kind = $("fan-kind").value;
  const start = FAN_STARTS[kind];
  try {
    const t0 = performance.now();
    const f = JSON.parse(fan_json(kind, num("fan-param"), start[0], start[1], 0, num("fan-spread"),
      Math.round(num("fan-rays")), num("fan-tau")));
    const { ctx, to } = frame($("fan-canvas"), -3, 3);
    f.paths.forEach((p) => polyline(ctx, to, p, "#3465a4"));
    dot(ctx, to, f.start, "#000");
    f.conjugate.forEach((c) => dot(ctx, to, c.x, c.multiplicity > 1 ? "#a40000" : "#cc0000", 3));
    const first = f.conjugate.length ? Math.min(...f.conjugate.map((c) => c.t)).toFixed(6) : "none";
    report("fan-out", `${f.paths.length} rays, ${f.conjugate.length} conjugate points, ` +
      `earliest at t = ${first} (${(performance.now() - t0).toFixed(0)} ms)`);
  } catch (e) {
    report("fan-out", String(e), true);
  }
}

function drawIndex() {
  try {
    const t0 = performance.now();
    const s = JSON.parse(index_sweep_json(num("idx-lo"), num("idx-hi"), Math.round(num("idx-n")), num("idx-tau")));
    const c = $("idx-canvas");
    const ctx = c.getContext("2d");
    ctx.clearRect(0, 0, c.width, c.height);
    const lo = s.samples[0].lambda, hi = s.samples[s.samples.length - 1].lambda;
    const top = Math.max(1, ...s.samples.map((r) => r.m_minus + r.m_zero));
    const X = (l) => 40 + ((l - lo) / (hi - lo)) * (c.width - 60);
    const Y = (m) => c.height - 30 - (m / top) * (c.height - 60);
    ctx.strokeStyle = "#999";
    ctx.beginPath();
    ctx.moveTo(40, Y(0)); ctx.lineTo(c.width - 20, Y(0));
    ctx.stroke();
    ctx.fillStyle = "#444";
    for (let m = 0; m <= top; m++) ctx.fillText(String(m), 20, Y(m) + 4);
    ctx.fillText(lo.toFixed(2), X(lo) - 10, c.height - 10);
    ctx.fillText(hi.toFixed(2), X(hi) - 20, c.height - 10);
    ctx.strokeStyle = "#3465a4";
    ctx.beginPath();
    s.samples.forEach((r, i) => {
      const y = Y(r.m_minus);
      if (i === 0) ctx.moveTo(X(r.lambda), y);
      else { ctx.lineTo(X(r.lambda), Y(s.samples[i - 1].m_minus)); ctx.lineTo(X(r.lambda), y); }
    });
    ctx.stroke();
    s.critical.forEach((mu, i) => {
      ctx.strokeStyle = s.sufficient[i] ? "#cc0000" : "#c4a000";
      ctx.beginPath(); ctx.moveTo(X(mu), 10); ctx.lineTo(X(mu), c.height - 30); ctx.stroke();
    });
    report("idx-out", `critical λ: ${s.critical.map((m) => m.toFixed(8)).join(", ") || "none"} ` +
      `(${(performance.now() - t0).toFixed(0)} ms)`);
  } catch (e) {
    report("idx-out", String(e), true);
  }
}

let target = [1.5, -1];

function drawZermelo() {
  const wx = num("z-wx"), wy = num("z-wy");
  const { ctx, to } = frame($("z-canvas"), -2.5, 2.5);
  // wind arrows
  ctx.strokeStyle = "#bbb";
  for (let x = -2; x <= 2; x++) for (let y = -2; y <= 2; y++) {
    ctx.beginPath(); ctx.moveTo(...to([x, y])); ctx.lineTo(...to([x + 0.6 * wx, y + 0.6 * wy])); ctx.stroke();
  }
  try {
    const r = JSON.parse(zermelo_json(wx, wy, target[0], target[1]));
    polyline(ctx, to, r.there, "#3465a4", 2);
    polyline(ctx, to, r.back, "#cc0000", 1);
    dot(ctx, to, [0, 0], "#000");
    dot(ctx, to, target, "#3465a4");
    report("z-out",
      `there ${r.time_there.toFixed(6)} (closed form ${r.closed_form_there.toFixed(6)}), ` +
      `back ${r.time_back.toFixed(6)}, round trip ${(r.time_there + r.time_back).toFixed(6)} ` +
      `vs calm ${(2 * r.calm_time).toFixed(6)}`);
  } catch (e) {
    report("z-out", String(e), true);
  }
}

await init();
$("fan-run").onclick = drawFan;
$("fan-kind").onchange = () => {
  $("fan-param").value = { sphere: 1, warped: 2, randers: 0.4 }[$("fan-kind").value];
  drawFan();
};
$("idx-run").onclick = drawIndex;
["z-wx", "z-wy"].forEach((id) => ($(id).oninput = drawZermelo));
$("z-canvas").onclick = (ev) => {
  const c = $("z-canvas");
  const rect = c.getBoundingClientRect();
  const { from } = frame(c, -2.5, 2.5);
  target = from((ev.clientX - rect.left) * (c.width / rect.width), (ev.clientY - rect.top) * (c.height / rect.height));
  drawZermelo();
};
drawFan();
drawIndex();
drawZermelo();
