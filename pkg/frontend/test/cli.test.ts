import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

const CLI = path.resolve(process.cwd(), "dist", "cli.js");
const FIXTURES = path.resolve(process.cwd(), "test", "fixtures");
const fixture = (name: string): string => path.join(FIXTURES, name);

let outDir: string;
beforeAll(() => {
  outDir = fs.mkdtempSync(path.join(os.tmpdir(), "koopnav-render-"));
});

const run = (...args: string[]) =>
  spawnSync(process.execPath, [CLI, ...args], { encoding: "utf8" });

describe("koopnav-render render", () => {
  it("writes a trajectory SVG and reports it", () => {
    const out = path.join(outDir, "corridor.svg");
    const result = run(
      "render",
      "--kind",
      "trajectory",
      "--in",
      fixture("trajectory_corridor_0.csv"),
      "--out",
      out,
    );
    expect(result.status).toBe(0);
    expect(result.stdout).toContain(`wrote ${out}`);
    const svg = fs.readFileSync(out, "utf8");
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg).toContain("config e797d1d45311");
  });

  it("renders an rg-compare figure with custom labels", () => {
    const out = path.join(outDir, "compare.svg");
    const result = run(
      "render",
      "--kind",
      "rg-compare",
      "--in",
      fixture("trajectory_comparison_waypoint_0.csv"),
      "--in",
      fixture("trajectory_comparison_soft-only_0.csv"),
      "--out",
      out,
      "--labels",
      "governed",
      "--labels",
      "direct",
      "--title",
      "arm comparison",
    );
    expect(result.status).toBe(0);
    const svg = fs.readFileSync(out, "utf8");
    expect(svg).toContain(">governed</text>");
    expect(svg).toContain(">direct</text>");
    expect(svg).toContain("arm comparison");
  });

  it("renders a min-distance overlay from several runs", () => {
    const out = path.join(outDir, "clearance.svg");
    const result = run(
      "render",
      "--kind",
      "min-distance",
      "--in",
      fixture("trajectory_sweep_0.98_0.csv"),
      "--in",
      fixture("trajectory_sweep_margin-free_0.csv"),
      "--out",
      out,
    );
    expect(result.status).toBe(0);
    expect(fs.readFileSync(out, "utf8")).toContain('class="collision-band"');
  });

  it("exits 2 and names both schemas on a foreign CSV", () => {
    const result = run(
      "render",
      "--kind",
      "trajectory",
      "--in",
      fixture("sweep_report.csv"),
      "--out",
      path.join(outDir, "nope.svg"),
    );
    expect(result.status).toBe(2);
    expect(result.stderr).toContain("koopnav-experiment-v1");
    expect(result.stderr).toContain("koopnav-trajectory-v1");
  });

  it("exits 2 when trajectory gets more than one input", () => {
    const result = run(
      "render",
      "--kind",
      "trajectory",
      "--in",
      fixture("trajectory_corridor_0.csv"),
      "--in",
      fixture("trajectory_sweep_0.5_0.csv"),
      "--out",
      path.join(outDir, "nope.svg"),
    );
    expect(result.status).toBe(2);
    expect(result.stderr).toContain("exactly one");
  });

  it("exits 2 when rg-compare gets a single input", () => {
    const result = run(
      "render",
      "--kind",
      "rg-compare",
      "--in",
      fixture("trajectory_comparison_waypoint_0.csv"),
      "--out",
      path.join(outDir, "nope.svg"),
    );
    expect(result.status).toBe(2);
    expect(result.stderr).toContain("at least two");
  });

  it("exits 2 on missing required flags", () => {
    const result = run("render", "--kind", "trajectory");
    expect(result.status).toBe(2);
    expect(result.stderr.length).toBeGreaterThan(0);
  });

  it("exits 1 when an input file cannot be read", () => {
    const result = run(
      "render",
      "--kind",
      "trajectory",
      "--in",
      path.join(outDir, "does-not-exist.csv"),
      "--out",
      path.join(outDir, "nope.svg"),
    );
    expect(result.status).toBe(1);
    expect(result.stderr).toContain("cannot read");
  });
});
