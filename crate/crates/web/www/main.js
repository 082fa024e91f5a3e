import init, { maps, simulate, plan_snapshot, gap_check } from "./pkg/coopsim_web.js";

const $ = (id) => document.getElementById(id);
const cv = $("cv");
const ctx = cv.getContext("2d");
let run = null;
let timer = null;

function bounds(lanes) {
  let [x0, y0, x1, y1] = [Infinity, Infinity, -Infinity, -Infinity];
  for (const lane of lanes) for (const [x, y] of lane) {
    x0 = Math.min(x0, x); y0 = Math.min(y0, y); x1 = Math.max(x1, x); y1 = Math.max(y1, y);
  }
  const scale = (cv.width - 20) / Math.max(x1 - x0, y1 - y0);
  // y up in map coordinates
  return (x, y) => [10 + (x - x0) * scale, cv.height - 10 - (y - y0) * scale];
}

function draw(k) {
  if (!run) return;
  const tf = run.tf;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.strokeStyle = "#ccc";
  ctx.lineWidth = 6;
  for (const lane of run.lanes) {
    ctx.beginPath();
    lane.forEach(([x, y], i) => (i ? ctx.lineTo(...tf(x, y)) : ctx.moveTo(...tf(x, y))));
    ctx.stroke();
  }
  const f = run.frames[k];
  $("time").textContent = f.t.toFixed(1);
  const pos = new Map(f.vehicles.filter((v) => v.active).map((v) => [v.id, tf(v.x, v.y)]));
  ctx.strokeStyle = "#d33";
  ctx.lineWidth = 1.5;
  for (const [a, b] of f.priorities) {
    if (!pos.has(a) || !pos.has(b)) continue;
    ctx.beginPath(); ctx.moveTo(...pos.get(a)); ctx.lineTo(...pos.get(b)); ctx.stroke();
  }
  for (const v of f.vehicles) {
    if (!v.active) continue;
    const [x, y] = pos.get(v.id);
    ctx.save();
    ctx.translate(x, y);
    ctx.rotate(-v.heading);
    ctx.fillStyle = v.cav ? "#2a6fdb" : "#777";
    ctx.fillRect(-9, -4, 18, 8);
    if (v.holding) { ctx.strokeStyle = "#000"; ctx.lineWidth = 1; ctx.strokeRect(-9, -4, 18, 8); }
    ctx.restore();
    ctx.fillStyle = "#000";
    ctx.fillText(v.id, x + 8, y - 6);
  }
}

function doRun() {
  clearInterval(timer);
  try {
    const out = JSON.parse(simulate($("map").value, +$("seed").value, $("method").value, +$("pct").value, +$("dur").value));
    run = { ...out, tf: bounds(out.lanes) };
    const m = out.metrics;
    $("metrics").textContent =
      `wait ${m.mean_wait_s.toFixed(2)} s, throughput ${m.throughput_per_h.toFixed(0)} /h, ` +
      `stop rate ${m.stop_rate.toFixed(2)}, PETs ${m.pet_count} (critical ${(100 * m.critical_pet_rate).toFixed(1)} %)`;
    $("metrics").className = "";
    $("scrub").max = out.frames.length - 1;
    $("scrub").value = 0;
    draw(0);
  } catch (e) {
    $("metrics").textContent = String(e.message ?? e);
    $("metrics").className = "err";
  }
}

function doSnapshot() {
  const t = run ? run.frames[+$("scrub").value].t : 0;
  try {
    const s = JSON.parse(plan_snapshot($("map").value, +$("seed").value, +$("pct").value, t));
    const fmt = (ps) => ps.map(([a, b]) => `${a}>${b}`).join(" ") || "(none)";
    const rows = s.candidates.slice(0, 25).map((c) =>
      `<tr class="${c.valid ? "" : "invalid"}"><td>${fmt(c.pairs)}</td><td>${c.valid ? c.metric.toFixed(2) : "invalid"}</td></tr>`);
    $("snapout").innerHTML =
      `<p>t = ${s.t.toFixed(2)} s, ${s.candidates.length} candidates, in force: ${fmt(s.previous)}</p>` +
      `<table><tr><th>priority pairs (first > second)</th><th>metric s</th></tr>${rows.join("")}</table>`;
  } catch (e) {
    $("snapout").innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

function doGap() {
  const r = JSON.parse(gap_check(+$("g1").value, +$("g2").value, +$("g3").value, +$("g4").value));
  $("gapout").textContent =
    `${r.accept ? "accept" : "wait"}: other arrives in ${r.eta_other_s.toFixed(2)} s, ` +
    `clearing takes ${r.eta_clear_s.toFixed(2)} s + ${r.tau_gap_s} s margin`;
}

await init();
for (const m of JSON.parse(maps())) $("map").add(new Option(m));
$("run").onclick = doRun;
$("snap").onclick = doSnapshot;
$("gap").onclick = doGap;
$("scrub").oninput = () => draw(+$("scrub").value);
$("play").onclick = () => {
  clearInterval(timer);
  timer = setInterval(() => {
    const s = $("scrub");
    if (+s.value >= +s.max) return clearInterval(timer);
    s.value = +s.value + 1;
    draw(+s.value);
  }, 50);
};
doRun();
doGap();
