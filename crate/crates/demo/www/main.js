import init, { Demo } from "./pkg/fsfnet_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;
let checkpoint = null;

function paint(canvas, rgba, size) {
  canvas.width = size;
  canvas.height = size;
  const img = new ImageData(new Uint8ClampedArray(rgba), size, size);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function showHha() {
  paint($("hha"), demo.hha(Number($("channel").value)), demo.size());
  paint($("depth"), demo.depth(), demo.size());
}

function render() {
  try {
    if (demo) demo.free();
    demo = new Demo(BigInt($("seed").value), Number($("index").value), 64, Number($("classes").value));
    if (checkpoint) $("ckptinfo").textContent = demo.load_checkpoint(checkpoint);
    const n = demo.size();
    paint($("rgb"), demo.rgb(), n);
    paint($("labels"), demo.labels(), n);
    showHha();
    $("pred").getContext("2d").clearRect(0, 0, n, n);
    $("gates").replaceChildren();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function segment() {
  try {
    paint($("pred"), demo.segment(), demo.size());
    $("acc").textContent = `prediction (pixel accuracy ${demo.accuracy().toFixed(3)})`;
    const gates = $("gates");
    gates.replaceChildren();
    demo.attention_names().forEach((name, i) => {
      const fig = document.createElement("figure");
      const c = document.createElement("canvas");
      c.className = "small";
      paint(c, demo.attention(i), demo.attention_size(i));
      const cap = document.createElement("figcaption");
      cap.textContent = name;
      fig.append(c, cap);
      gates.append(fig);
    });
    if (demo.attention_names().length === 0) gates.textContent = "this network has no attention gates";
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

$("hha").addEventListener("click", (ev) => {
  const r = ev.target.getBoundingClientRect();
  const n = demo.size();
  const x = ((ev.clientX - r.left) / r.width) * n;
  const y = ((ev.clientY - r.top) / r.height) * n;
  demo.punch_hole(x, y, Number($("radius").value));
  showHha();
});
$("reset").addEventListener("click", () => { demo.reset_depth(); showHha(); });
$("channel").addEventListener("change", showHha);
$("render").addEventListener("click", render);
$("segment").addEventListener("click", segment);
$("ckpt").addEventListener("change", async (ev) => {
  const file = ev.target.files[0];
  if (!file) return;
  checkpoint = new Uint8Array(await file.arrayBuffer());
  try {
    $("ckptinfo").textContent = demo.load_checkpoint(checkpoint);
    $("status").textContent = "";
  } catch (e) {
    checkpoint = null;
    $("status").textContent = String(e);
  }
});

await init();
render();
