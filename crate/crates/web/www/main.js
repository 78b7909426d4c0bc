import init, { Sample } from "./pkg/rockgan_web.js";

const $ = (id) => document.getElementById(id);
let sample = null;

function status(msg) {
  $("status").textContent = msg || "";
}

function guard(f) {
  try {
    status("");
    f();
  } catch (e) {
    status(e.message || String(e));
  }
}

function drawSlice() {
  const n = sample.edge;
  const t = +$("threshold").value;
  const z = +$("z").value;
  $("tval").textContent = t;
  $("zval").textContent = z;
  const px = sample.slice(z, t);
  const img = new ImageData(new Uint8ClampedArray(px), n, n);
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(img, 0, 0);
  const ctx = $("slice").getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, 320, 320);

  const m = JSON.parse(sample.minkowski(t));
  $("mink").innerHTML = [
    ["porosity", m.phi.toFixed(4)],
    ["S_V (1/m)", m.sv.toExponential(3)],
    ["K_V (1/m²)", m.kv.toExponential(3)],
    ["χ_V (1/m³)", m.chiv.toExponential(3)],
  ].map(([k, v]) => `<tr><td>${k}</td><td>${v}</td></tr>`).join("");
}

// series: [{label, color, xs, ys}]
function plot(canvas, series, { logx = false, xlabel = "", ylabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, L = 50, B = 30;
  ctx.clearRect(0, 0, W, H);
  const fx = logx ? Math.log10 : (v) => v;
  const all = series.flatMap((s) => s.xs.map((x, i) => [fx(x), s.ys[i]]));
  const x0 = Math.min(...all.map((p) => p[0])), x1 = Math.max(...all.map((p) => p[0]));
  const y1 = Math.max(...all.map((p) => p[1])) || 1;
  const sx = (x) => L + ((fx(x) - x0) / (x1 - x0 || 1)) * (W - L - 10);
  const sy = (y) => H - B - (y / y1) * (H - B - 10);
  ctx.strokeStyle = "#444";
  ctx.strokeRect(L, 10, W - L - 10, H - B - 10);
  ctx.fillStyle = "#444";
  ctx.fillText(xlabel, W / 2, H - 8);
  ctx.fillText(ylabel, 4, 20);
  ctx.fillText(y1.toPrecision(3), 4, 34);
  ctx.fillText(logx ? `1e${x0.toFixed(0)}` : x0.toFixed(0), L, H - B + 12);
  ctx.fillText(logx ? `1e${x1.toFixed(0)}` : x1.toFixed(0), W - 40, H - B + 12);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(s.ys[i])) : ctx.moveTo(sx(x), sy(s.ys[i]))));
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, W - 80, 24 + 14 * k);
  });
}

function make() {
  sample = new Sample(+$("edge").value, +$("porosity").value, +$("radius").value, +$("seed").value);
  $("threshold").value = sample.otsu();
  $("z").max = sample.edge - 1;
  $("z").value = Math.min(+$("z").value, sample.edge - 1);
  drawSlice();
}

function s2() {
  const r = JSON.parse(sample.s2(+$("threshold").value));
  const colors = { x: "#c33", y: "#3a3", z: "#33c", radial: "#000" };
  plot(
    $("s2plot"),
    Object.entries(r.curves).map(([k, ys]) => ({ label: k, color: colors[k], xs: r.distances, ys })),
    { xlabel: "lag (voxels)", ylabel: "S2" },
  );
}

function flow() {
  $("perm").textContent = "solving...";
  // let the label paint before the solver blocks the thread
  setTimeout(() => guard(() => {
    const f = JSON.parse(sample.flow(+$("threshold").value, $("axis").value));
    $("perm").textContent =
      `k = ${f.permeability_darcy.toPrecision(4)} D, effective porosity ${f.phi_eff.toFixed(3)}, ${f.iterations} iterations`;
    const mids = f.densities.map((_, i) => Math.sqrt(f.edges[i] * f.edges[i + 1]));
    plot($("vplot"), [{ label: `|u|/<|u|> (${f.axis})`, color: "#33c", xs: mids, ys: f.densities }], {
      logx: true, xlabel: "normalized speed", ylabel: "pdf",
    });
  }), 10);
}

await init();
$("make").onclick = () => guard(make);
$("threshold").oninput = () => guard(drawSlice);
$("z").oninput = () => guard(drawSlice);
$("s2").onclick = () => guard(s2);
$("flow").onclick = () => guard(flow);
guard(make);
