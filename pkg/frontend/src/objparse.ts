/**
 * Minimal OBJ parser for the polygonal meshes the pipeline exports.
 * Faces may have any vertex count; they are fan-triangulated for the GPU
 * while the original polygon count is kept for display.
 */

export interface ParsedMesh {
  positions: Float32Array;      // triangle soup, 9 floats per triangle
  normals: Float32Array;        // flat per-triangle normals
  faceCount: number;            // polygons, as in the manifest
  triangleCount: number;
}

export function parseObj(text: string): ParsedMesh {
  const verts: number[][] = [];
  const faces: number[][] = [];
  for (const line of text.split('\n')) {
    const parts = line.trim().split(/\s+/);
    if (parts[0] === 'v' && parts.length >= 4) {
      verts.push([Number(parts[1]), Number(parts[2]), Number(parts[3])]);
    } else if (parts[0] === 'f' && parts.length >= 4) {
      const idx = parts.slice(1).map((tok) => {
        const v = parseInt(tok.split('/')[0], 10);
        return v > 0 ? v - 1 : verts.length + v;
      });
      faces.push(idx);
    }
  }
  const pos: number[] = [];
  const nrm: number[] = [];
  let tris = 0;
  for (const f of faces) {
    for (let k = 1; k + 1 < f.length; k++) {
      const a = verts[f[0]];
      const b = verts[f[k]];
      const c = verts[f[k + 1]];
      if (!a || !b || !c) throw new Error('face index out of range');
      pos.push(...a, ...b, ...c);
      const ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
      const vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
      let nx = uy * vz - uz * vy;
      let ny = uz * vx - ux * vz;
      let nz = ux * vy - uy * vx;
      const len = Math.hypot(nx, ny, nz) || 1;
      nx /= len; ny /= len; nz /= len;
      nrm.push(nx, ny, nz, nx, ny, nz, nx, ny, nz);
      tris++;
    }
  }
  return {
    positions: new Float32Array(pos),
    normals: new Float32Array(nrm),
    faceCount: faces.length,
    triangleCount: tris,
  };
}
