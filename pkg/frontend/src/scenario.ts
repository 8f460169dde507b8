import { ParseError, SchemaError, TrajectoryFile } from "./csv";

export const SCENARIO_SCHEMA = "koopnav-scenario-v1";

export type Motion = "static" | "linear" | "sinusoidal";

export interface Obstacle {
  id: string;
  radius: number;
  motion: Motion;
  center: [number, number];
  velocity: [number, number];
  amplitude: [number, number];
  period: number;
  inflation: number;
}

export interface Scenario {
  name: string;
  start: [number, number, number];
  targets: [number, number][];
  obstacles: Obstacle[];
  maxSteps: number;
  goalTolerance: number;
  alpha: number | null;
  dt: number;
  horizon: number;
}

const pair = (value: unknown, what: string): [number, number] => {
  if (!Array.isArray(value) || value.length !== 2) {
    throw new ParseError(`scenario field ${what} must be a 2-element array`);
  }
  return [Number(value[0]), Number(value[1])];
};

export function parseScenario(json: string): Scenario {
  let payload: any;
  try {
    payload = JSON.parse(json);
  } catch (err) {
    throw new ParseError(`scenario JSON does not parse: ${(err as Error).message}`);
  }
  if (payload.schema !== SCENARIO_SCHEMA) {
    throw new SchemaError(`unsupported schema ${payload.schema}; expected ${SCENARIO_SCHEMA}`);
  }
  const obstacles: Obstacle[] = (payload.obstacles ?? []).map((ob: any) => ({
    id: String(ob.id),
    radius: Number(ob.radius),
    motion: (ob.motion ?? "static") as Motion,
    center: pair(ob.center ?? [0, 0], `obstacle ${ob.id} center`),
    velocity: pair(ob.velocity ?? [0, 0], `obstacle ${ob.id} velocity`),
    amplitude: pair(ob.amplitude ?? [0, 0], `obstacle ${ob.id} amplitude`),
    period: Number(ob.period ?? 1),
    inflation: Number(ob.inflation ?? 0),
  }));
  const start = payload.start;
  if (!Array.isArray(start) || start.length !== 3) {
    throw new ParseError("scenario field start must be a 3-element array");
  }
  return {
    name: String(payload.name),
    start: [Number(start[0]), Number(start[1]), Number(start[2])],
    targets: (payload.targets ?? []).map((t: unknown, i: number) => pair(t, `targets[${i}]`)),
    obstacles,
    maxSteps: Number(payload.max_steps ?? 300),
    goalTolerance: Number(payload.goal_tolerance ?? 0.1),
    alpha: payload.alpha === null || payload.alpha === undefined ? null : Number(payload.alpha),
    dt: Number(payload.dt ?? 0.1),
    horizon: Number(payload.horizon ?? 10),
  };
}

/** Disk center at step k under the obstacle's motion law. */
export function obstacleCenter(ob: Obstacle, k: number): [number, number] {
  if (ob.motion === "linear") {
    return [ob.center[0] + k * ob.velocity[0], ob.center[1] + k * ob.velocity[1]];
  }
  if (ob.motion === "sinusoidal") {
    const phase = Math.sin((2 * Math.PI * k) / ob.period);
    return [ob.center[0] + ob.amplitude[0] * phase, ob.center[1] + ob.amplitude[1] * phase];
  }
  return [ob.center[0], ob.center[1]];
}

/** Scenario document embedded in a trajectory CSV, if present. */
export function scenarioFromTrajectory(file: TrajectoryFile): Scenario | null {
  const json = file.metadata["scenario_json"];
  if (json === undefined || json === "") return null;
  return parseScenario(json);
}
