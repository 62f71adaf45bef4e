import init, { EpisodeDemo, FmmDemo, ValueMapDemo } from "./pkg/goalnav_web.js";

const SCALE = 3;

function blit(canvas, w, h, rgba) {
  canvas.width = w;
  canvas.height = h;
  canvas.style.width = `${w * SCALE}px`;
  canvas.style.height = `${h * SCALE}px`;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function pixel(canvas, ev) {
  const r = canvas.getBoundingClientRect();
  return [
    Math.floor(((ev.clientX - r.left) / r.width) * canvas.width),
    Math.floor(((ev.clientY - r.top) / r.height) * canvas.height),
  ];
}

await init();

// Episode
const epCanvas = document.getElementById("ep-canvas");
const status = document.getElementById("status");
let episode = null;
let playing = false;

function drawEpisode(text) {
  blit(epCanvas, episode.width(), episode.height(), episode.rgba());
  status.textContent = text;
}

function newEpisode() {
  const seed = Number(document.getElementById("ep-seed").value) || 0;
  const agents = Number(document.getElementById("ep-agents").value);
  try {
    episode?.free();
    episode = new EpisodeDemo(seed, agents);
    drawEpisode(episode.status());
  } catch (e) {
    status.textContent = `error: ${e}`;
  }
}

function tick() {
  if (!playing || !episode) return;
  drawEpisode(episode.step(2));
  if (episode.finished()) {
    playing = false;
    document.getElementById("ep-play").textContent = "play";
    return;
  }
  requestAnimationFrame(tick);
}

document.getElementById("ep-new").onclick = newEpisode;
document.getElementById("ep-step").onclick = () => episode && drawEpisode(episode.step(10));
document.getElementById("ep-play").onclick = (ev) => {
  playing = !playing;
  ev.target.textContent = playing ? "pause" : "play";
  tick();
};
newEpisode();

// Fast marching
const fmmCanvas = document.getElementById("fmm-canvas");
const fmmInfo = document.getElementById("fmm-info");
const fmm = new FmmDemo(1);
const drawFmm = () => blit(fmmCanvas, fmm.width(), fmm.height(), fmm.rgba());
fmmCanvas.onclick = (ev) => {
  const [x, y] = pixel(fmmCanvas, ev);
  if (ev.shiftKey) {
    const n = fmm.trace_from(x, y);
    fmmInfo.textContent = n > 0 ? `path: ${n} cells` : "no path from there";
  } else {
    const t0 = performance.now();
    const ok = fmm.set_goal(x, y);
    fmmInfo.textContent = ok ? `solved in ${(performance.now() - t0).toFixed(1)} ms` : "that cell is blocked";
  }
  drawFmm();
};
drawFmm();

// Value map
const vmCanvas = document.getElementById("vm-canvas");
const vmInfo = document.getElementById("vm-info");
const vm = new ValueMapDemo(96);
const drawVm = () => blit(vmCanvas, vm.size(), vm.size(), vm.rgba());
vmCanvas.onclick = (ev) => {
  const [x, y] = pixel(vmCanvas, ev);
  const c = Number(document.getElementById("vm-c").value);
  const mu = vm.observe(x, y, c);
  vmInfo.textContent = `belief at pointer: ${mu.toFixed(3)}`;
  drawVm();
};
document.getElementById("vm-ucb").onchange = (ev) => { vm.set_show_ucb(ev.target.checked); drawVm(); };
document.getElementById("vm-reset").onclick = () => { vm.reset(); drawVm(); vmInfo.textContent = ""; };
drawVm();
