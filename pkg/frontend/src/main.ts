/**
 * Browser entry point: three.js scene over the pipeline's output
 * directory. Reads ./manifest.json (override with ?dir=path), caches one
 * mesh per step, and drives the slider / badges / selection UI.
 */

import * as THREE from 'three';
import { OrbitControls } from 'three/addons/controls/OrbitControls.js';

import { parseObj, ParsedMesh } from './objparse.js';
import {
  badge, levelColor, loadManifest, ViewerSession,
} from './session.js';

const params = new URLSearchParams(window.location.search);
const baseDir = params.get('dir') ?? '.';

const canvas = document.getElementById('view') as HTMLCanvasElement;
const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
renderer.setPixelRatio(window.devicePixelRatio);

const scene = new THREE.Scene();
scene.background = new THREE.Color(0xf2f2f5);
const camera = new THREE.PerspectiveCamera(55, 2, 0.01, 1e5);
const controls = new OrbitControls(camera, canvas);

scene.add(new THREE.AmbientLight(0xffffff, 0.55));
const key = new THREE.DirectionalLight(0xffffff, 1.1);
key.position.set(1, 0.8, 1.4);
scene.add(key);
const fill = new THREE.DirectionalLight(0xffffff, 0.4);
fill.position.set(-1, -0.5, 0.6);
scene.add(fill);

let session: ViewerSession;
let currentObject: THREE.Object3D | null = null;
const meshCache = new Map<number, ParsedMesh>();

const el = (id: string) => document.getElementById(id) as HTMLElement;
const slider = el('slider') as HTMLInputElement;

async function meshFor(step: number): Promise<ParsedMesh> {
  const hit = meshCache.get(step);
  if (hit) return hit;
  const file = session.manifest.models[step].file;
  const res = await fetch(`${baseDir}/${file}`);
  if (!res.ok) throw new Error(`fetch ${file}: HTTP ${res.status}`);
  const parsed = parseObj(await res.text());
  meshCache.set(step, parsed);
  return parsed;
}

function buildObject(parsed: ParsedMesh, color: string): THREE.Object3D {
  const geo = new THREE.BufferGeometry();
  geo.setAttribute('position', new THREE.BufferAttribute(parsed.positions, 3));
  geo.setAttribute('normal', new THREE.BufferAttribute(parsed.normals, 3));
  const mat = new THREE.MeshStandardMaterial({
    color: new THREE.Color(color), metalness: 0.0, roughness: 0.85,
    side: THREE.DoubleSide,
  });
  const mesh = new THREE.Mesh(geo, mat);
  const wire = new THREE.LineSegments(
    new THREE.EdgesGeometry(geo, 20),
    new THREE.LineBasicMaterial({ color: 0x30343a }));
  const group = new THREE.Group();
  group.add(mesh);
  group.add(wire);
  return group;
}

function fitCamera(obj: THREE.Object3D): void {
  const box = new THREE.Box3().setFromObject(obj);
  const center = box.getCenter(new THREE.Vector3());
  const size = box.getSize(new THREE.Vector3()).length() || 1;
  camera.position.copy(center.clone().add(
    new THREE.Vector3(0.9, -1.2, 0.7).multiplyScalar(size)));
  camera.up.set(0, 0, 1);
  camera.near = size / 1000;
  camera.far = size * 50;
  camera.updateProjectionMatrix();
  controls.target.copy(center);
  controls.update();
}

let firstShow = true;

async function show(step: number): Promise<void> {
  const model = session.slide(step);
  slider.value = String(session.currentStep);
  const parsed = await meshFor(session.currentStep);

  if (currentObject) scene.remove(currentObject);
  const color = session.colorMode === 'by-level'
    ? levelColor(model.level) : '#b9c2cf';
  currentObject = buildObject(parsed, color);
  scene.add(currentObject);
  if (firstShow) {
    fitCamera(currentObject);
    firstShow = false;
  }

  const b = badge(model);
  const badgeEl = el('badge');
  badgeEl.textContent = b.text;
  badgeEl.style.background = b.color;
  el('info').textContent =
    `step ${model.steps}/${session.maxStep}  level ${model.level}  ` +
    `cuts ${model.cuts}  faces ${model.faces}  ` +
    `diff ${model.diff_sum.toPrecision(4)}`;
  (el('select-box') as HTMLInputElement).checked =
    session.isSelected(session.currentStep);
  el('selected-list').textContent =
    session.selectedSteps.length
      ? `selected: [${session.selectedSteps.join(', ')}]` : 'nothing selected';
}

function exportSelection(): void {
  const blob = new Blob([session.exportSelection()],
                        { type: 'application/json' });
  const a = document.createElement('a');
  a.href = URL.createObjectURL(blob);
  a.download = 'selection.json';
  a.click();
  URL.revokeObjectURL(a.href);
}

function resize(): void {
  const w = canvas.clientWidth || canvas.parentElement!.clientWidth;
  const h = canvas.clientHeight || canvas.parentElement!.clientHeight;
  renderer.setSize(w, h, false);
  camera.aspect = w / h;
  camera.updateProjectionMatrix();
}

async function init(): Promise<void> {
  try {
    session = await loadManifest(`${baseDir}/manifest.json`);
  } catch (err) {
    el('info').textContent = String(err);
    throw err;
  }
  slider.min = '0';
  slider.max = String(session.maxStep);
  slider.step = '1';
  slider.addEventListener('input', () => void show(Number(slider.value)));
  el('select-box').addEventListener('change', () => {
    session.toggleSelect();
    void show(session.currentStep);
  });
  el('export').addEventListener('click', exportSelection);
  el('color-mode').addEventListener('change', (ev) => {
    session.setColorMode(
      (ev.target as HTMLInputElement).checked ? 'by-level' : 'plain');
    void show(session.currentStep);
  });
  window.addEventListener('keydown', (ev) => {
    if (ev.key === 'ArrowRight') void show(session.currentStep + 1);
    else if (ev.key === 'ArrowLeft') void show(session.currentStep - 1);
    else if (ev.key === 'a') void show(session.nextAnchor());
  });
  window.addEventListener('resize', resize);
  resize();
  await show(0);
  renderer.setAnimationLoop(() => {
    controls.update();
    renderer.render(scene, camera);
  });
}

void init();
