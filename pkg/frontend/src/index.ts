export {
  ParseError,
  SchemaError,
  TRAJECTORY_COLUMNS,
  TRAJECTORY_SCHEMA,
  parseHalfspaces,
  parseTrajectoryCsv,
  runLabel,
} from "./csv";
export type { Halfspace, StepRow, TrajectoryFile } from "./csv";
export { SCENARIO_SCHEMA, obstacleCenter, parseScenario, scenarioFromTrajectory } from "./scenario";
export type { Motion, Obstacle, Scenario } from "./scenario";
export { PALETTE, renderMinDistance, renderRgCompare, renderTrajectory } from "./figures";
export type { RenderOptions } from "./figures";
