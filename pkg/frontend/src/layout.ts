// Small deterministic force-directed layout: seeded initial positions,
// pairwise repulsion, spring attraction along edges, centering pull.
// Pure function of its inputs, so renders are reproducible.

export interface Point {
  x: number;
  y: number;
}

interface LayoutEdge {
  source: string;
  target: string;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function forceLayout(
  nodeIds: string[],
  edges: LayoutEdge[],
  width: number,
  height: number,
  iterations = 150,
  seed = 1,
): Map<string, Point> {
  const n = nodeIds.length;
  const index = new Map(nodeIds.map((id, i) => [id, i]));
  const rand = mulberry32(seed);
  const xs = new Float64Array(n);
  const ys = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    xs[i] = width * (0.2 + 0.6 * rand());
    ys[i] = height * (0.2 + 0.6 * rand());
  }
  const pairs: Array<[number, number]> = [];
  for (const e of edges) {
    const u = index.get(e.source);
    const v = index.get(e.target);
    if (u !== undefined && v !== undefined && u !== v) pairs.push([u, v]);
  }

  const area = width * height;
  const ideal = Math.sqrt(area / Math.max(n, 1)) * 0.7;
  for (let step = 0; step < iterations; step++) {
    const temperature = 0.1 * Math.min(width, height) * (1 - step / iterations) + 1;
    const dx = new Float64Array(n);
    const dy = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      for (let j = i + 1; j < n; j++) {
        let ux = xs[i] - xs[j];
        let uy = ys[i] - ys[j];
        let dist = Math.hypot(ux, uy);
        if (dist < 1e-6) {
          ux = 1e-3 * (i - j);
          uy = 1e-3;
          dist = Math.hypot(ux, uy);
        }
        const repulse = (ideal * ideal) / dist;
        dx[i] += (ux / dist) * repulse;
        dy[i] += (uy / dist) * repulse;
        dx[j] -= (ux / dist) * repulse;
        dy[j] -= (uy / dist) * repulse;
      }
    }
    for (const [u, v] of pairs) {
      const ux = xs[u] - xs[v];
      const uy = ys[u] - ys[v];
      const dist = Math.max(Math.hypot(ux, uy), 1e-6);
      const attract = (dist * dist) / ideal;
      dx[u] -= (ux / dist) * attract;
      dy[u] -= (uy / dist) * attract;
      dx[v] += (ux / dist) * attract;
      dy[v] += (uy / dist) * attract;
    }
    const cx = width / 2;
    const cy = height / 2;
    for (let i = 0; i < n; i++) {
      dx[i] += (cx - xs[i]) * 0.02;
      dy[i] += (cy - ys[i]) * 0.02;
      const move = Math.hypot(dx[i], dy[i]);
      const cap = Math.min(move, temperature);
      if (move > 1e-9) {
        xs[i] += (dx[i] / move) * cap;
        ys[i] += (dy[i] / move) * cap;
      }
      const margin = 16;
      xs[i] = Math.min(width - margin, Math.max(margin, xs[i]));
      ys[i] = Math.min(height - margin, Math.max(margin, ys[i]));
    }
  }

  const out = new Map<string, Point>();
  nodeIds.forEach((id, i) => out.set(id, { x: xs[i], y: ys[i] }));
  return out;
}
