/**
 * Permission-schedule evaluation: run every permission row of a schedule
 * against one encrypted artifact, score each task of the partially
 * decrypted model, and check the capability budgets:
 *
 * - authorized task: accuracy drop from baseline <= gamma (5 points)
 * - unauthorized task: accuracy <= chance + deltaMargin (15 points), or a
 *   drop of >= 30 points for tasks whose baseline is very high
 * - no permissions at all: every task at chance
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { readContainer } from "./container.js";
import { allAccuracies } from "./mlp.js";
import { EncryptArtifacts, decrypt, keygen } from "./primary.js";
import { ToyTaskSuite } from "./tasks.js";

export interface PermissionRow {
  label: string;
  granted: string[]; // task names; empty = passive attacker
}

export interface RowResult {
  row: PermissionRow;
  exitCode: number;
  accuracies: Record<string, number>;
  violations: string[];
}

export function taskAttribute(task: string): string {
  return `Task=${task}`;
}

export function evaluateRow(
  suite: ToyTaskSuite,
  baseline: Record<string, number>,
  row: PermissionRow,
  accuracies: Record<string, number>,
  exitCode: number,
): RowResult {
  const violations: string[] = [];
  const chance = suite.chance;
  for (const task of suite.tasks) {
    const acc = accuracies[task];
    const base = baseline[task];
    if (row.granted.includes(task)) {
      if (base - acc > suite.gammaBudget + 1e-9) {
        violations.push(
          `${row.label}: authorized ${task} dropped ${(100 * (base - acc)).toFixed(1)}pts`,
        );
      }
    } else {
      const limited = acc <= chance + suite.deltaMargin + 1e-9 || base - acc >= 0.30 - 1e-9;
      if (!limited) {
        violations.push(
          `${row.label}: unauthorized ${task} still at ${(100 * acc).toFixed(1)}% ` +
          `(base ${(100 * base).toFixed(1)}%)`,
        );
      }
    }
  }
  if (row.granted.length === 0) {
    for (const task of suite.tasks) {
      if (Math.abs(accuracies[task] - chance) > 0.10 + 1e-9) {
        violations.push(
          `${row.label}: passive attacker gets ${(100 * accuracies[task]).toFixed(1)}% on ${task}`,
        );
      }
    }
    if (exitCode !== 3) violations.push(`${row.label}: expected zero-decryption exit 3, got ${exitCode}`);
  }
  return { row, exitCode, accuracies, violations };
}

/** Drive keygen + decrypt + scoring for a whole schedule from one artifact. */
export function runSchedule(
  suite: ToyTaskSuite,
  baseline: Record<string, number>,
  art: EncryptArtifacts,
  schedule: PermissionRow[],
  workDir: string,
  mode: "te" | "ce" = "ce",
): RowResult[] {
  mkdirSync(workDir, { recursive: true });
  const results: RowResult[] = [];
  for (const row of schedule) {
    const safe = row.label.replace(/[^A-Za-z0-9_-]/g, "_");
    const decPath = join(workDir, `dec_${safe}.snm`);
    let exitCode: number;
    if (row.granted.length === 0) {
      // no satisfying attributes: issue a key for an unused attribute
      const keyPath = join(workDir, `key_${safe}.ask`);
      keygen(art.msk, ["Role=None"], keyPath);
      exitCode = decrypt(art, keyPath, decPath, mode);
    } else {
      const keyPath = join(workDir, `key_${safe}.ask`);
      keygen(art.msk, row.granted.map(taskAttribute), keyPath);
      exitCode = decrypt(art, keyPath, decPath, mode);
    }
    const model = readContainer(readFileSync(decPath) as Buffer);
    const accuracies = allAccuracies(model, suite);
    results.push(evaluateRow(suite, baseline, row, accuracies, exitCode));
  }
  return results;
}

export function scheduleCsv(
  suite: ToyTaskSuite,
  baseline: Record<string, number>,
  results: RowResult[],
): string {
  const lines = [`permissions,${suite.tasks.join(",")},exit`];
  lines.push(
    `baseline,${suite.tasks.map((t) => baseline[t].toFixed(4)).join(",")},-`,
  );
  for (const r of results) {
    const marks = suite.tasks
      .map((t) => (r.row.granted.includes(t) ? "+" : "-"))
      .join("");
    lines.push(
      `${r.row.label} [${marks}],${suite.tasks
        .map((t) => r.accuracies[t].toFixed(4))
        .join(",")},${r.exitCode}`,
    );
  }
  return lines.join("\n") + "\n";
}

export function writeCsv(path: string, content: string): void {
  writeFileSync(path, content);
}
