/**
 * Synthetic multi-task classification suites.
 *
 * Each task owns one block of input features and is a Gaussian-mixture
 * classification problem inside that block: class j of task t is a cluster
 * centered on unit vector e_j of block t, everything outside the block is
 * low-amplitude noise. The tasks share one MLP trunk, so trained neurons
 * couple across tasks exactly the way capability control has to cope with.
 * Train and test splits come from disjoint seeded streams.
 */

import { Rng } from "./rng.js";

export interface Sample {
  x: Float32Array;
  label: number;
}

export interface SuiteConfig {
  tasks: string[];
  classes: number;
  featuresPerTask: number;
  noise: number;
  trainPerTask: number;
  testPerTask: number;
  seed: number;
  /** authorized-task accuracy drop budget (gamma) */
  gammaBudget: number;
  /** unauthorized ceiling above chance (delta = chance + deltaMargin) */
  deltaMargin: number;
}

export interface ToyTaskSuite extends SuiteConfig {
  dIn: number;
  dOut: number;
  chance: number;
}

export const DEFAULT_CONFIG: Omit<SuiteConfig, "tasks" | "seed"> = {
  classes: 4,
  featuresPerTask: 16,
  noise: 0.12,
  trainPerTask: 1024,
  testPerTask: 512,
  gammaBudget: 0.05,
  deltaMargin: 0.15,
};

export function makeSuite(tasks: string[], seed: number, overrides: Partial<SuiteConfig> = {}): ToyTaskSuite {
  const cfg: SuiteConfig = { ...DEFAULT_CONFIG, tasks, seed, ...overrides };
  return {
    ...cfg,
    dIn: cfg.tasks.length * cfg.featuresPerTask,
    dOut: cfg.tasks.length * cfg.classes,
    chance: 1 / cfg.classes,
  };
}

function drawSamples(suite: ToyTaskSuite, taskIndex: number, count: number, rng: Rng): Sample[] {
  const out: Sample[] = [];
  const f = suite.featuresPerTask;
  for (let i = 0; i < count; i++) {
    const label = rng.int(suite.classes);
    const x = new Float32Array(suite.dIn);
    for (let d = 0; d < suite.dIn; d++) x[d] = suite.noise * rng.gauss();
    x[taskIndex * f + label] += 1.0;
    out.push({ x, label });
  }
  return out;
}

/** Training stream for one task: seed namespace 1. */
export function trainSplit(suite: ToyTaskSuite, taskIndex: number): Sample[] {
  const rng = new Rng(suite.seed * 1013904223 + taskIndex * 7919 + 1);
  return drawSamples(suite, taskIndex, suite.trainPerTask, rng);
}

/** Held-out stream for one task: seed namespace 2, disjoint from training. */
export function testSplit(suite: ToyTaskSuite, taskIndex: number): Sample[] {
  const rng = new Rng(suite.seed * 1013904223 + taskIndex * 7919 + 2);
  return drawSamples(suite, taskIndex, suite.testPerTask, rng);
}
