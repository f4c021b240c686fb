/**
 * Viewer session state: a parsed manifest, the current slider position,
 * and the selected steps. Pure logic, no DOM — main.ts does the rendering.
 *
 * The session never mutates the manifest or the meshes; its only output
 * is the selection.json payload.
 */

export const SUPPORTED_MANIFEST_VERSION = 1;

export interface ManifestModel {
  file: string;
  tag: 'anchor' | 'interpolation';
  level: number;
  steps: number;
  cuts: number;
  diff_sum: number;
  faces: number;
}

export interface Manifest {
  version: number;
  input: string;
  params: Record<string, number>;
  levels: number;
  models: ManifestModel[];
}

export type ColorMode = 'plain' | 'by-level';

export class ManifestError extends Error {}

export function parseManifest(data: unknown): Manifest {
  if (typeof data !== 'object' || data === null) {
    throw new ManifestError('manifest is not an object');
  }
  const m = data as Record<string, unknown>;
  if (m.version !== SUPPORTED_MANIFEST_VERSION) {
    throw new ManifestError(
      `unsupported manifest version ${String(m.version)} ` +
      `(viewer supports ${SUPPORTED_MANIFEST_VERSION})`);
  }
  if (!Array.isArray(m.models) || m.models.length === 0) {
    throw new ManifestError('manifest has no models');
  }
  const models: ManifestModel[] = m.models.map((raw, i) => {
    const e = raw as Record<string, unknown>;
    for (const key of ['file', 'tag', 'level', 'steps', 'cuts', 'faces']) {
      if (!(key in e)) throw new ManifestError(`model ${i} lacks '${key}'`);
    }
    if (e.tag !== 'anchor' && e.tag !== 'interpolation') {
      throw new ManifestError(`model ${i} has unknown tag '${String(e.tag)}'`);
    }
    if (e.steps !== i) {
      throw new ManifestError(`model ${i} has steps=${String(e.steps)}`);
    }
    return {
      file: String(e.file),
      tag: e.tag,
      level: Number(e.level),
      steps: Number(e.steps),
      cuts: Number(e.cuts),
      diff_sum: Number(e.diff_sum ?? 0),
      faces: Number(e.faces),
    };
  });
  return {
    version: SUPPORTED_MANIFEST_VERSION,
    input: String(m.input ?? ''),
    params: (m.params ?? {}) as Record<string, number>,
    levels: Number(m.levels ?? 0),
    models,
  };
}

export class ViewerSession {
  readonly manifest: Manifest;
  private step = 0;
  private selected = new Set<number>();
  private mode: ColorMode = 'plain';

  constructor(manifest: Manifest) {
    this.manifest = manifest;
  }

  get currentStep(): number {
    return this.step;
  }

  get maxStep(): number {
    return this.manifest.models.length - 1;
  }

  get current(): ManifestModel {
    return this.manifest.models[this.step];
  }

  get colorMode(): ColorMode {
    return this.mode;
  }

  setColorMode(mode: ColorMode): void {
    this.mode = mode;
  }

  /** Clamp-slide to a step; returns the model now shown. */
  slide(step: number): ManifestModel {
    const clamped = Math.min(Math.max(0, Math.round(step)), this.maxStep);
    this.step = clamped;
    return this.current;
  }

  /** Next anchor at or after step+1, wrapping around. */
  nextAnchor(): number {
    const n = this.manifest.models.length;
    for (let k = 1; k <= n; k++) {
      const i = (this.step + k) % n;
      if (this.manifest.models[i].tag === 'anchor') return i;
    }
    return this.step;
  }

  isSelected(step: number): boolean {
    return this.selected.has(step);
  }

  toggleSelect(step?: number): boolean {
    const s = step ?? this.step;
    if (s < 0 || s > this.maxStep) return false;
    if (this.selected.has(s)) {
      this.selected.delete(s);
      return false;
    }
    this.selected.add(s);
    return true;
  }

  get selectedSteps(): number[] {
    return [...this.selected].sort((a, b) => a - b);
  }

  /** selection.json payload consumed by the metrics command. */
  exportSelection(): string {
    return JSON.stringify({ selected: this.selectedSteps }, null, 2) + '\n';
  }
}

/** Badge descriptor; anchors and interpolations are visually distinct. */
export function badge(model: ManifestModel): { text: string; color: string } {
  return model.tag === 'anchor'
    ? { text: 'Anchor', color: '#e8762c' }
    : { text: 'Interpolation', color: '#3fa34d' };
}

const LEVEL_COLORS = ['#4878cf', '#e8762c', '#3fa34d', '#b04ae0', '#d0b03c',
                      '#50b8c8', '#c05060'];

export function levelColor(level: number): string {
  return LEVEL_COLORS[level % LEVEL_COLORS.length];
}

export async function loadManifest(url: string,
                                   fetcher: typeof fetch = fetch): Promise<ViewerSession> {
  const res = await fetcher(url);
  if (!res.ok) {
    throw new ManifestError(`fetch ${url}: HTTP ${res.status}`);
  }
  return new ViewerSession(parseManifest(await res.json()));
}
