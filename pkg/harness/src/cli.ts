/**
 * Harness CLI.
 *
 *   train    — train a multi-task fixture; emit model.snm, per-task .trace
 *              files, policies.txt, suite.json
 *   evaluate — score a (possibly partially decrypted) .snm against a suite
 *   e2e      — full loop: train, encrypt via the primary CLI, run a
 *              permission schedule, write the accuracy table as CSV, check
 *              capability budgets; exits nonzero on violations
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";

import { readContainer, writeContainer } from "./container.js";
import { allAccuracies, captureTraces, trainSuite } from "./mlp.js";
import { EncryptArtifacts, encrypt } from "./primary.js";
import { ToyTaskSuite, makeSuite } from "./tasks.js";
import { writeTrace } from "./trace.js";
import { PermissionRow, runSchedule, scheduleCsv, taskAttribute, writeCsv } from "./evaluate.js";

const TASK_NAMES = ["health", "code", "story", "math", "email"];

export function defaultSchedule(tasks: string[]): PermissionRow[] {
  if (tasks.length === 2) {
    return [
      { label: "admin", granted: [...tasks] },
      { label: `${tasks[0]}-only`, granted: [tasks[0]] },
      { label: `${tasks[1]}-only`, granted: [tasks[1]] },
      { label: "passive", granted: [] },
    ];
  }
  // 6-row schedule over one encrypted artifact (4+ tasks)
  return [
    { label: "admin", granted: [...tasks] },
    { label: `no-${tasks[0]}`, granted: tasks.slice(1) },
    { label: "pair", granted: [tasks[0], tasks[3]] },
    { label: `${tasks[2]}-only`, granted: [tasks[2]] },
    { label: "front-pair", granted: [tasks[0], tasks[1]] },
    { label: "passive", granted: [] },
  ];
}

export interface FixtureFiles {
  suite: ToyTaskSuite;
  modelPath: string;
  tracePaths: string[];
  policyPath: string;
}

export function emitFixture(suite: ToyTaskSuite, outDir: string, trainSeed: number): FixtureFiles {
  mkdirSync(outDir, { recursive: true });
  const model = trainSuite(suite, { seed: trainSeed });
  const modelPath = join(outDir, "model.snm");
  writeFileSync(modelPath, writeContainer(model));

  const tracePaths: string[] = [];
  const traces = captureTraces(model, suite);
  for (const [task, { sums, count }] of traces) {
    const p = join(outDir, `${task}.trace`);
    writeFileSync(p, writeTrace({ task, sums, count }));
    tracePaths.push(p);
  }
  const policyPath = join(outDir, "policies.txt");
  writeFileSync(
    policyPath,
    suite.tasks.map((t) => `${t} := ${taskAttribute(t)}`).join("\n") + "\n",
  );
  writeFileSync(join(outDir, "suite.json"), JSON.stringify(suite, null, 2));
  return { suite, modelPath, tracePaths, policyPath };
}

export function loadSuite(path: string): ToyTaskSuite {
  return JSON.parse(readFileSync(path, "utf-8")) as ToyTaskSuite;
}

function cmdTrain(args: Record<string, string | undefined>): number {
  const k = Number(args.tasks ?? 2);
  const seed = Number(args.seed ?? 7);
  const outDir = args.out ?? "out";
  const suite = makeSuite(TASK_NAMES.slice(0, k), seed);
  const fixture = emitFixture(suite, outDir, seed);
  const model = readContainer(readFileSync(fixture.modelPath) as Buffer);
  const accs = allAccuracies(model, suite);
  console.log("fixture trained:", JSON.stringify(accs));
  return 0;
}

function cmdEvaluate(args: Record<string, string | undefined>): number {
  const suite = loadSuite(args.suite ?? "out/suite.json");
  const model = readContainer(readFileSync(args.model ?? "out/model.snm") as Buffer);
  const accs = allAccuracies(model, suite);
  console.log(JSON.stringify(accs, null, 2));
  if (args.csv) {
    const line = [
      `task,${suite.tasks.join(",")}`,
      `accuracy,${suite.tasks.map((t) => accs[t].toFixed(4)).join(",")}`,
    ].join("\n");
    writeFileSync(args.csv, line + "\n");
  }
  return 0;
}

export function runE2e(
  k: number,
  seed: number,
  outDir: string,
  mode: "te" | "ce" = "ce",
): { results: ReturnType<typeof runSchedule>; csv: string } {
  const suite = makeSuite(TASK_NAMES.slice(0, k), seed);
  const fixture = emitFixture(suite, outDir, seed);
  const model = readContainer(readFileSync(fixture.modelPath) as Buffer);
  const baseline = allAccuracies(model, suite);

  const art: EncryptArtifacts = encrypt(
    fixture.modelPath,
    fixture.tracePaths,
    fixture.policyPath,
    outDir,
    seed,
  );
  const schedule = defaultSchedule(suite.tasks);
  const results = runSchedule(suite, baseline, art, schedule, outDir, mode);
  const csv = scheduleCsv(suite, baseline, results);
  writeCsv(join(outDir, "capability_table.csv"), csv);
  return { results, csv };
}

function cmdE2e(args: Record<string, string | undefined>): number {
  const k = Number(args.tasks ?? 2);
  const seed = Number(args.seed ?? 7);
  const outDir = args.out ?? "out";
  const mode = (args.mode ?? "ce") as "te" | "ce";
  const { results, csv } = runE2e(k, seed, outDir, mode);
  console.log(csv);
  const violations = results.flatMap((r) => r.violations);
  for (const v of violations) console.error(`BUDGET VIOLATION: ${v}`);
  console.log(violations.length === 0 ? "capability budgets: PASS" : "capability budgets: FAIL");
  return violations.length === 0 ? 0 : 1;
}

function main(): void {
  const [, , command, ...rest] = process.argv;
  const { values } = parseArgs({
    args: rest,
    options: {
      tasks: { type: "string" },
      seed: { type: "string" },
      out: { type: "string" },
      model: { type: "string" },
      suite: { type: "string" },
      csv: { type: "string" },
      mode: { type: "string" },
    },
  });
  const args = values as Record<string, string | undefined>;
  let status: number;
  switch (command) {
    case "train":
      status = cmdTrain(args);
      break;
    case "evaluate":
      status = cmdEvaluate(args);
      break;
    case "e2e":
      status = cmdE2e(args);
      break;
    default:
      console.error("usage: cli.ts <train|evaluate|e2e> [--tasks K] [--seed N] [--out DIR]");
      status = 2;
  }
  process.exit(status);
}

const isMain = process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop()!);
if (isMain) main();
