export type Attrs = Record<string, string | number>;

export const esc = (text: string): string =>
  text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");

/** Fixed-precision pixel coordinate so output is byte-stable across runs. */
export const px = (value: number): string => {
  const rounded = value.toFixed(2);
  return rounded === "-0.00" ? "0.00" : rounded;
};

const attrString = (attrs: Attrs): string =>
  Object.entries(attrs)
    .map(([key, value]) => ` ${key}="${typeof value === "number" ? px(value) : esc(value)}"`)
    .join("");

export const el = (tag: string, attrs: Attrs, children = ""): string =>
  children === "" ? `<${tag}${attrString(attrs)}/>` : `<${tag}${attrString(attrs)}>${children}</${tag}>`;

export const textEl = (x: number, y: number, content: string, attrs: Attrs = {}): string =>
  el("text", { x: px(x), y: px(y), ...attrs }, esc(content));

/** Maps a world-coordinate box onto a pixel box with the y axis flipped. */
export class Frame {
  constructor(
    public readonly worldX: [number, number],
    public readonly worldY: [number, number],
    public readonly pixelX: [number, number],
    public readonly pixelY: [number, number],
  ) {
    if (worldX[1] <= worldX[0] || worldY[1] <= worldY[0]) {
      throw new Error("frame world extents must be nonempty");
    }
  }

  toX(x: number): number {
    const t = (x - this.worldX[0]) / (this.worldX[1] - this.worldX[0]);
    return this.pixelX[0] + t * (this.pixelX[1] - this.pixelX[0]);
  }

  toY(y: number): number {
    const t = (y - this.worldY[0]) / (this.worldY[1] - this.worldY[0]);
    return this.pixelY[1] - t * (this.pixelY[1] - this.pixelY[0]);
  }

  scaleX(length: number): number {
    return (length * (this.pixelX[1] - this.pixelX[0])) / (this.worldX[1] - this.worldX[0]);
  }

  points(coords: [number, number][]): string {
    return coords.map(([x, y]) => `${px(this.toX(x))},${px(this.toY(y))}`).join(" ");
  }
}

/** Round-number axis ticks covering [lo, hi], at most `count + 1` of them. */
export function ticks(lo: number, hi: number, count: number): number[] {
  const span = hi - lo;
  if (span <= 0) return [lo];
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const candidates = [step * 10, step * 5, step * 2, step];
  let chosen = step;
  for (const c of candidates) {
    if (span / c >= count - 1) {
      chosen = c;
      break;
    }
  }
  const out: number[] = [];
  for (let v = Math.ceil(lo / chosen) * chosen; v <= hi + chosen * 1e-9; v += chosen) {
    out.push(Math.abs(v) < chosen * 1e-9 ? 0 : Number(v.toPrecision(12)));
  }
  return out;
}

export const tickLabel = (value: number): string =>
  Math.abs(value) >= 1000 || (value !== 0 && Math.abs(value) < 0.01)
    ? value.toExponential(1)
    : String(Number(value.toPrecision(6)));

export function svgDocument(width: number, height: number, body: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">\n` +
    `${body}\n</svg>\n`
  );
}
