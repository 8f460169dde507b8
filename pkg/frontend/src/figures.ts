import { ParseError, TrajectoryFile, runLabel } from "./csv";
import { Scenario, obstacleCenter, scenarioFromTrajectory } from "./scenario";
import { Frame, el, px, svgDocument, textEl, tickLabel, ticks } from "./svg";

export interface RenderOptions {
  title?: string;
  labels?: string[];
}

export const PALETTE = [
  "#1f77b4",
  "#d62728",
  "#2ca02c",
  "#9467bd",
  "#ff7f0e",
  "#8c564b",
  "#17becf",
  "#7f7f7f",
];

const seriesLabel = (files: TrajectoryFile[], options: RenderOptions, i: number): string =>
  options.labels?.[i] ?? runLabel(files[i]);

const configFooter = (files: TrajectoryFile[], x: number, y: number): string => {
  const hashes: string[] = [];
  for (const file of files) {
    const hash = file.metadata["config_hash"];
    if (hash && !hashes.includes(hash)) hashes.push(hash);
  }
  const label = hashes.length > 0 ? `config ${hashes.join(", ")}` : "config unavailable";
  return textEl(x, y, label, { class: "config-footer", fill: "#777", "font-size": "10" });
};

const title = (text: string, width: number): string =>
  textEl(width / 2, 24, text, { fill: "#222", "font-size": "15", "text-anchor": "middle" });

interface Bounds {
  x: [number, number];
  y: [number, number];
}

const grow = (bounds: Bounds, x: number, y: number): void => {
  bounds.x[0] = Math.min(bounds.x[0], x);
  bounds.x[1] = Math.max(bounds.x[1], x);
  bounds.y[0] = Math.min(bounds.y[0], y);
  bounds.y[1] = Math.max(bounds.y[1], y);
};

/** Snapshot step indices for obstacle motion: endpoints plus interior samples. */
const snapshotSteps = (file: TrajectoryFile, count: number): number[] => {
  if (file.rows.length === 0) return [0];
  const k0 = file.rows[0].k;
  const k1 = file.rows[file.rows.length - 1].k;
  if (k1 <= k0) return [k0];
  const out: number[] = [];
  for (let i = 0; i < count; i++) {
    const k = Math.round(k0 + (i * (k1 - k0)) / (count - 1));
    if (!out.includes(k)) out.push(k);
  }
  return out;
};

/** Equal-aspect frame: expands the narrower world axis to fill the pixel box. */
const fitEqualAspect = (bounds: Bounds, pixelX: [number, number], pixelY: [number, number]): Frame => {
  const spanX = bounds.x[1] - bounds.x[0];
  const spanY = bounds.y[1] - bounds.y[0];
  const pxW = pixelX[1] - pixelX[0];
  const pxH = pixelY[1] - pixelY[0];
  const scale = Math.min(pxW / spanX, pxH / spanY);
  const extraX = (pxW / scale - spanX) / 2;
  const extraY = (pxH / scale - spanY) / 2;
  return new Frame(
    [bounds.x[0] - extraX, bounds.x[1] + extraX],
    [bounds.y[0] - extraY, bounds.y[1] + extraY],
    pixelX,
    pixelY,
  );
};

const drawObstacles = (scenario: Scenario, steps: number[], frame: Frame): string => {
  const parts: string[] = [];
  for (const ob of scenario.obstacles) {
    const moving = ob.motion !== "static";
    const ks = moving ? steps : [steps[0]];
    ks.forEach((k, i) => {
      const [cx, cy] = obstacleCenter(ob, k);
      const opacity = ks.length === 1 ? 0.35 : 0.15 + (0.3 * i) / (ks.length - 1);
      parts.push(
        el("circle", {
          class: "obstacle",
          cx: frame.toX(cx),
          cy: frame.toY(cy),
          r: frame.scaleX(ob.radius),
          fill: "#b0413e",
          "fill-opacity": opacity.toFixed(2),
          stroke: "#6e2120",
          "stroke-width": "0.8",
        }),
      );
    });
  }
  return parts.join("\n");
};

const drawTargets = (scenario: Scenario, frame: Frame): string =>
  scenario.targets
    .map(([tx, ty]) => {
      const cx = frame.toX(tx);
      const cy = frame.toY(ty);
      const s = 6;
      const points = `${px(cx)},${px(cy - s)} ${px(cx + s)},${px(cy)} ${px(cx)},${px(cy + s)} ${px(cx - s)},${px(cy)}`;
      return el("polygon", {
        class: "target",
        points,
        fill: "#e6a817",
        stroke: "#7a5a0a",
        "stroke-width": "1",
      });
    })
    .join("\n");

const axisBox = (pixelX: [number, number], pixelY: [number, number]): string =>
  el("rect", {
    x: pixelX[0],
    y: pixelY[0],
    width: pixelX[1] - pixelX[0],
    height: pixelY[1] - pixelY[0],
    fill: "none",
    stroke: "#999",
    "stroke-width": "1",
  });

const xAxis = (frame: Frame, label: string): string => {
  const parts: string[] = [];
  for (const t of ticks(frame.worldX[0], frame.worldX[1], 6)) {
    const x = frame.toX(t);
    parts.push(
      el("line", { x1: x, y1: frame.pixelY[1], x2: x, y2: frame.pixelY[1] + 4, stroke: "#666" }),
      textEl(x, frame.pixelY[1] + 16, tickLabel(t), {
        fill: "#444",
        "font-size": "10",
        "text-anchor": "middle",
      }),
    );
  }
  const mid = (frame.pixelX[0] + frame.pixelX[1]) / 2;
  parts.push(
    textEl(mid, frame.pixelY[1] + 32, label, { fill: "#333", "font-size": "11", "text-anchor": "middle" }),
  );
  return parts.join("\n");
};

const yAxis = (frame: Frame, label: string): string => {
  const parts: string[] = [];
  for (const t of ticks(frame.worldY[0], frame.worldY[1], 6)) {
    const y = frame.toY(t);
    parts.push(
      el("line", { x1: frame.pixelX[0] - 4, y1: y, x2: frame.pixelX[0], y2: y, stroke: "#666" }),
      textEl(frame.pixelX[0] - 7, y + 3, tickLabel(t), {
        fill: "#444",
        "font-size": "10",
        "text-anchor": "end",
      }),
    );
  }
  const midY = (frame.pixelY[0] + frame.pixelY[1]) / 2;
  const x = frame.pixelX[0] - 38;
  parts.push(
    textEl(x, midY, label, {
      fill: "#333",
      "font-size": "11",
      "text-anchor": "middle",
      transform: `rotate(-90 ${px(x)} ${px(midY)})`,
    }),
  );
  return parts.join("\n");
};

interface Arm {
  file: TrajectoryFile;
  color: string;
  label: string;
}

/** Shared trajectory drawing: obstacles, targets, reference and agent paths, markers. */
const trajectoryPanel = (
  arms: Arm[],
  pixelX: [number, number],
  pixelY: [number, number],
  drawReferences: boolean,
): string => {
  for (const arm of arms) {
    if (arm.file.rows.length === 0) {
      throw new ParseError("trajectory input has no rows to draw");
    }
  }
  const scenario = arms.map((arm) => scenarioFromTrajectory(arm.file)).find((s) => s !== null) ?? null;
  const bounds: Bounds = { x: [Infinity, -Infinity], y: [Infinity, -Infinity] };
  for (const arm of arms) {
    for (const row of arm.file.rows) grow(bounds, row.x, row.y);
  }
  if (scenario) {
    for (const [tx, ty] of scenario.targets) grow(bounds, tx, ty);
    const steps = snapshotSteps(arms[0].file, 5);
    for (const ob of scenario.obstacles) {
      for (const k of steps) {
        const [cx, cy] = obstacleCenter(ob, k);
        grow(bounds, cx - ob.radius, cy - ob.radius);
        grow(bounds, cx + ob.radius, cy + ob.radius);
      }
    }
  }
  const pad = Math.max(0.3, 0.05 * Math.max(bounds.x[1] - bounds.x[0], bounds.y[1] - bounds.y[0]));
  bounds.x = [bounds.x[0] - pad, bounds.x[1] + pad];
  bounds.y = [bounds.y[0] - pad, bounds.y[1] + pad];

  const frame = fitEqualAspect(bounds, pixelX, pixelY);
  const parts: string[] = [axisBox(pixelX, pixelY)];
  if (scenario) {
    parts.push(drawObstacles(scenario, snapshotSteps(arms[0].file, 5), frame));
    parts.push(drawTargets(scenario, frame));
  }
  for (const arm of arms) {
    if (drawReferences) {
      const refs: [number, number][] = arm.file.rows.map((row) => [row.refX, row.refY]);
      parts.push(
        el("polyline", {
          class: "trace reference",
          points: frame.points(refs),
          fill: "none",
          stroke: "#aaa",
          "stroke-width": "1",
          "stroke-dasharray": "3 3",
        }),
      );
    }
    const path: [number, number][] = arm.file.rows.map((row) => [row.x, row.y]);
    parts.push(
      el("polyline", {
        class: "trace agent",
        points: frame.points(path),
        fill: "none",
        stroke: arm.color,
        "stroke-width": "1.8",
      }),
    );
    const last = arm.file.rows[arm.file.rows.length - 1];
    parts.push(
      el("rect", {
        class: "end",
        x: frame.toX(last.x) - 4,
        y: frame.toY(last.y) - 4,
        width: 8,
        height: 8,
        fill: arm.color,
        stroke: "#222",
        "stroke-width": "0.8",
      }),
    );
  }
  const first = arms[0].file.rows[0];
  parts.push(
    el("circle", {
      class: "start",
      cx: frame.toX(first.x),
      cy: frame.toY(first.y),
      r: 5,
      fill: "#2ca02c",
      stroke: "#14581b",
      "stroke-width": "1",
    }),
  );
  parts.push(xAxis(frame, "x [m]"), yAxis(frame, "y [m]"));
  return parts.join("\n");
};

/** Shared clearance-vs-step drawing with the sub-zero collision band. */
const clearancePanel = (arms: Arm[], pixelX: [number, number], pixelY: [number, number]): string => {
  let maxK = 1;
  let lo = 0;
  let hi = -Infinity;
  for (const arm of arms) {
    for (const row of arm.file.rows) {
      maxK = Math.max(maxK, row.k);
      lo = Math.min(lo, row.minClearance);
      hi = Math.max(hi, row.minClearance);
    }
  }
  if (!Number.isFinite(hi)) {
    throw new ParseError("clearance input has no rows to draw");
  }
  const pad = 0.08 * (hi - lo || 1);
  const frame = new Frame([0, maxK], [lo - pad, hi + pad], pixelX, pixelY);
  const zeroY = frame.toY(0);
  const parts: string[] = [
    el("rect", {
      class: "collision-band",
      x: pixelX[0],
      y: zeroY,
      width: pixelX[1] - pixelX[0],
      height: pixelY[1] - zeroY,
      fill: "#d62728",
      "fill-opacity": "0.12",
    }),
    el("line", {
      class: "zero-line",
      x1: pixelX[0],
      y1: zeroY,
      x2: pixelX[1],
      y2: zeroY,
      stroke: "#888",
      "stroke-dasharray": "4 3",
    }),
    axisBox(pixelX, pixelY),
  ];
  arms.forEach((arm) => {
    const points: [number, number][] = arm.file.rows.map((row) => [row.k, row.minClearance]);
    parts.push(
      el("polyline", {
        class: "trace",
        points: frame.points(points),
        fill: "none",
        stroke: arm.color,
        "stroke-width": "1.6",
      }),
    );
  });
  parts.push(xAxis(frame, "step"), yAxis(frame, "min clearance [m]"));
  return parts.join("\n");
};

const legend = (arms: Arm[], x: number, y: number): string => {
  const parts: string[] = [];
  arms.forEach((arm, i) => {
    const rowY = y + 18 * i;
    parts.push(
      el("line", {
        class: "legend-swatch",
        x1: x,
        y1: rowY,
        x2: x + 22,
        y2: rowY,
        stroke: arm.color,
        "stroke-width": "2.5",
      }),
      textEl(x + 28, rowY + 4, arm.label, { class: "legend-label", fill: "#333", "font-size": "11" }),
    );
  });
  return parts.join("\n");
};

const toArms = (files: TrajectoryFile[], options: RenderOptions): Arm[] =>
  files.map((file, i) => ({
    file,
    color: PALETTE[i % PALETTE.length],
    label: seriesLabel(files, options, i),
  }));

/** One run as a top-down map: path, waypoints, targets, obstacle motion. */
export function renderTrajectory(file: TrajectoryFile, options: RenderOptions = {}): string {
  const width = 640;
  const height = 540;
  const arms = toArms([file], options);
  const scenario = scenarioFromTrajectory(file);
  const heading = options.title ?? `trajectory: ${scenario?.name ?? runLabel(file)}`;
  const body = [
    title(heading, width),
    trajectoryPanel(arms, [55, width - 25], [40, height - 55], true),
    configFooter([file], 55, height - 10),
  ].join("\n");
  return svgDocument(width, height, body);
}

/** Clearance-vs-step overlay for one or more runs; sub-zero band marks collision. */
export function renderMinDistance(files: TrajectoryFile[], options: RenderOptions = {}): string {
  if (files.length === 0) {
    throw new ParseError("min-distance needs at least one trajectory CSV");
  }
  const width = 700;
  const height = 420;
  const arms = toArms(files, options);
  const body = [
    title(options.title ?? "minimum obstacle clearance", width),
    clearancePanel(arms, [60, width - 150], [40, height - 60]),
    legend(arms, width - 135, 56),
    configFooter(files, 60, height - 10),
  ].join("\n");
  return svgDocument(width, height, body);
}

/** Two-arm comparison: map overlay on the left, clearance overlay on the right. */
export function renderRgCompare(files: TrajectoryFile[], options: RenderOptions = {}): string {
  if (files.length < 2) {
    throw new ParseError("rg-compare needs at least two trajectory CSVs (one per arm)");
  }
  const width = 900;
  const height = 470;
  const arms = toArms(files, options);
  const body = [
    title(options.title ?? "waypoint-governed vs direct tracking", width),
    trajectoryPanel(arms, [55, 445], [40, height - 60], false),
    clearancePanel(arms, [510, width - 20], [40, height - 60]),
    legend(arms, width - 160, 58),
    configFooter(files, 55, height - 10),
  ].join("\n");
  return svgDocument(width, height, body);
}
