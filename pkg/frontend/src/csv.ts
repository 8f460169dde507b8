import Papa from "papaparse";

export const TRAJECTORY_SCHEMA = "koopnav-trajectory-v1";

export const TRAJECTORY_COLUMNS = [
  "k",
  "target_index",
  "x",
  "y",
  "theta",
  "v",
  "omega",
  "ref_x",
  "ref_y",
  "ref_theta",
  "pred_x",
  "pred_y",
  "pred_theta",
  "min_clearance",
  "margin",
  "halfspaces",
  "slack_shared",
  "slack_step",
  "qp_status",
  "qp_iterations",
  "solve_time_ms",
  "fallback",
  "slid",
  "passthrough",
  "warm_started",
] as const;

export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

export class ParseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ParseError";
  }
}

export interface Halfspace {
  a: number;
  b: number;
  c: number;
}

export interface StepRow {
  k: number;
  targetIndex: number;
  x: number;
  y: number;
  theta: number;
  v: number;
  omega: number;
  refX: number;
  refY: number;
  refTheta: number;
  predX: number | null;
  predY: number | null;
  predTheta: number | null;
  minClearance: number;
  margin: number;
  halfspaces: Halfspace[];
  slackShared: number;
  slackStep: number;
  qpStatus: string;
  qpIterations: number;
  solveTimeMs: number;
  fallback: boolean;
  slid: boolean;
  passthrough: boolean;
  warmStarted: boolean;
}

export interface TrajectoryFile {
  metadata: Record<string, string>;
  completed: boolean;
  completionStep: number | null;
  rows: StepRow[];
}

const num = (value: string, column: string, line: number): number => {
  const parsed = Number(value);
  if (value === "" || Number.isNaN(parsed)) {
    throw new ParseError(`row ${line}: column ${column} is not a number: ${JSON.stringify(value)}`);
  }
  return parsed;
};

const optionalNum = (value: string): number | null => (value === "" ? null : Number(value));

export const parseHalfspaces = (packed: string): Halfspace[] => {
  if (packed === "") return [];
  return packed.split(";").map((part) => {
    const fields = part.split(":");
    if (fields.length !== 3) {
      throw new ParseError(`malformed half-space entry: ${JSON.stringify(part)}`);
    }
    return { a: Number(fields[0]), b: Number(fields[1]), c: Number(fields[2]) };
  });
};

/**
 * Parse one trajectory CSV: `# key=value` metadata lines, then a fixed
 * 25-column body. Rejects foreign schema versions by name and enumerates
 * any missing body columns.
 */
export function parseTrajectoryCsv(text: string): TrajectoryFile {
  const lines = text.split(/\r?\n/);
  if (lines.length === 0 || !lines[0].startsWith("# schema=")) {
    throw new SchemaError("missing schema comment line in trajectory CSV");
  }
  const schema = lines[0].slice("# schema=".length);
  if (schema !== TRAJECTORY_SCHEMA) {
    throw new SchemaError(`unsupported schema ${schema}; expected ${TRAJECTORY_SCHEMA}`);
  }

  const metadata: Record<string, string> = {};
  let bodyStart = 1;
  for (let i = 1; i < lines.length; i++) {
    if (!lines[i].startsWith("# ")) break;
    const entry = lines[i].slice(2);
    const eq = entry.indexOf("=");
    const key = eq === -1 ? entry : entry.slice(0, eq);
    metadata[key] = eq === -1 ? "" : entry.slice(eq + 1);
    bodyStart = i + 1;
  }

  const body = lines.slice(bodyStart).join("\n");
  const parsed = Papa.parse<string[]>(body.trim(), { skipEmptyLines: true });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new ParseError(`CSV body parse failed: ${first.message}`);
  }
  const grid = parsed.data;
  if (grid.length === 0) {
    throw new SchemaError("trajectory CSV has no header row");
  }
  const header = grid[0];
  const missing = TRAJECTORY_COLUMNS.filter((c) => !header.includes(c));
  if (missing.length > 0) {
    throw new SchemaError(`trajectory CSV missing columns: ${missing.join(", ")}`);
  }
  const index = new Map(header.map((name, i) => [name, i]));
  const cell = (row: string[], column: string): string => row[index.get(column)!] ?? "";

  const rows: StepRow[] = grid.slice(1).map((raw, i) => {
    const line = i + 1;
    return {
      k: num(cell(raw, "k"), "k", line),
      targetIndex: num(cell(raw, "target_index"), "target_index", line),
      x: num(cell(raw, "x"), "x", line),
      y: num(cell(raw, "y"), "y", line),
      theta: num(cell(raw, "theta"), "theta", line),
      v: num(cell(raw, "v"), "v", line),
      omega: num(cell(raw, "omega"), "omega", line),
      refX: num(cell(raw, "ref_x"), "ref_x", line),
      refY: num(cell(raw, "ref_y"), "ref_y", line),
      refTheta: num(cell(raw, "ref_theta"), "ref_theta", line),
      predX: optionalNum(cell(raw, "pred_x")),
      predY: optionalNum(cell(raw, "pred_y")),
      predTheta: optionalNum(cell(raw, "pred_theta")),
      minClearance: num(cell(raw, "min_clearance"), "min_clearance", line),
      margin: num(cell(raw, "margin"), "margin", line),
      halfspaces: parseHalfspaces(cell(raw, "halfspaces")),
      slackShared: num(cell(raw, "slack_shared"), "slack_shared", line),
      slackStep: num(cell(raw, "slack_step"), "slack_step", line),
      qpStatus: cell(raw, "qp_status"),
      qpIterations: num(cell(raw, "qp_iterations"), "qp_iterations", line),
      solveTimeMs: num(cell(raw, "solve_time_ms"), "solve_time_ms", line),
      fallback: cell(raw, "fallback") === "1",
      slid: cell(raw, "slid") === "1",
      passthrough: cell(raw, "passthrough") === "1",
      warmStarted: cell(raw, "warm_started") === "1",
    };
  });

  const completed = metadata["completed"] === "True";
  const rawStep = metadata["completion_step"] ?? "";
  const completionStep = rawStep === "" || rawStep === "None" ? null : Number(rawStep);
  delete metadata["completed"];
  delete metadata["completion_step"];
  return { metadata, completed, completionStep, rows };
}

/** Label for one run when overlaying several: experiment level/arm, else scenario+seed. */
export function runLabel(file: TrajectoryFile): string {
  const meta = file.metadata;
  if (meta["level"] !== undefined) return meta["level"];
  if (meta["arm"] !== undefined) return meta["arm"];
  const scenario = meta["scenario"] ?? "run";
  return meta["seed"] !== undefined ? `${scenario} seed ${meta["seed"]}` : scenario;
}
