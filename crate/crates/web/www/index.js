import init, { layer_table, partition, throughput_curve } from "./pkg/pipecnn_web.js";

const $ = (id) => document.getElementById(id);

function table(headers, rows) {
  const head = "<tr>" + headers.map((h) => `<th>${h}</th>`).join("") + "</tr>";
  const body = rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
  return head + body;
}

const ms = (x) => x.toFixed(3);

function showLayers() {
  const rows = JSON.parse(layer_table());
  $("layers").innerHTML = table(
    ["layer", "output", "MACs", "listed MACs", "elements"],
    rows.map((r) => [r.name, r.shape, r.macs, r.table_macs, r.output_size]),
  );
}

function runPartition(ev) {
  ev?.preventDefault();
  const f = new FormData($("partition-form"));
  const custom = f.get("custom") === "on";
  try {
    const v = JSON.parse(partition(
      Number(f.get("workers")),
      Number(f.get("capacity")),
      custom ? Number(f.get("tpm")) : -1,
      Number(f.get("latency")),
      Number(f.get("spe")),
    ));
    let html = "<table>" + table(
      ["step", "cuts", "cut elements", "bottleneck ms"],
      v.steps.map((s) => [s.step, s.cuts.join(", ") || "-", s.cut_sizes.join(", ") || "-", ms(s.bottleneck_ms)]),
    ) + "</table>";
    if (!v.feasible) {
      html += `<p class="err">No split fits a capacity of ${f.get("capacity")} elements.</p>`;
    } else {
      html += "<table>" + table(
        ["stage", "layers", "compute ms", "send ms"],
        v.stages.map((s, i) => [i, s, ms(v.stage_compute_ms[i]), i < v.cut_comm_ms.length ? ms(v.cut_comm_ms[i]) : "-"]),
      ) + "</table>";
      html += `<p>period ${ms(v.period_ms)} ms, ${(v.throughput_ratio * 100).toFixed(1)}% of one device</p>`;
      $("curve-form").cuts.value = v.steps[3].cuts.join(",");
    }
    $("partition").innerHTML = html;
  } catch (e) {
    $("partition").innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

function plot(points) {
  const w = 640, h = 240, pad = 40;
  const maxN = Math.max(...points.map((p) => p.n_images));
  const maxR = Math.max(2, ...points.map((p) => p.ratio));
  const x = (n) => pad + (w - 2 * pad) * Math.log(n) / Math.log(maxN || 1);
  const y = (r) => h - pad - (h - 2 * pad) * r / maxR;
  const line = points.map((p, i) => `${i ? "L" : "M"}${x(p.n_images).toFixed(1)},${y(p.ratio).toFixed(1)}`).join("");
  return `<svg width="${w}" height="${h}">
    <line x1="${pad}" y1="${y(1)}" x2="${w - pad}" y2="${y(1)}" stroke="#aaa" stroke-dasharray="4"/>
    <path d="${line}" fill="none" stroke="#2a6" stroke-width="2"/>
    <text x="${pad}" y="${pad - 10}">speedup (max ${maxR.toFixed(2)}x)</text>
    <text x="${w - pad}" y="${h - 10}" text-anchor="end">images (log scale)</text>
  </svg>`;
}

function runCurve(ev) {
  ev?.preventDefault();
  const f = new FormData($("curve-form"));
  const cuts = String(f.get("cuts")).split(",").map((s) => s.trim()).filter(Boolean).map(Number);
  try {
    const points = JSON.parse(throughput_curve(Uint32Array.from(cuts), f.get("overlap"), Number(f.get("max"))));
    if (points.length === 0) {
      $("curve").innerHTML = "<p>No batch sizes in range.</p>";
      return;
    }
    $("curve").innerHTML = plot(points) + "<table>" + table(
      ["images", "one device ms", "pipelined ms", "speedup"],
      points.map((p) => [p.n_images, ms(p.baseline_ms), ms(p.pipelined_ms), p.ratio.toFixed(3)]),
    ) + "</table>";
  } catch (e) {
    $("curve").innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

await init();
showLayers();
$("partition-form").addEventListener("submit", runPartition);
$("curve-form").addEventListener("submit", runCurve);
runPartition();
runCurve();
