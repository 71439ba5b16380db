/**
 * Single-hidden-layer MLP: forward pass, activation capture, and SGD
 * training with per-task softmax heads.
 *
 * The loss for a sample of task t is cross-entropy over that task's logit
 * slice only, so the trunk is trained jointly on all tasks. An L1 penalty
 * on hidden activations concentrates each task's circuit into few strong
 * neurons, mirroring the sparse task-specific structure large models show;
 * without it the toy trunk smears importance so thinly that no small
 * neuron subset is critical for anything.
 */

import { Container, Dtype, LayerWeights, neuronCount } from "./container.js";
import { Rng } from "./rng.js";
import { Sample, ToyTaskSuite, testSplit, trainSplit } from "./tasks.js";

export interface TrainOptions {
  hiddenPerTask: number;
  epochs: number;
  batch: number;
  lr: number;
  l1: number;
  weightDecay: number;
  seed: number;
}

export const DEFAULT_TRAIN: TrainOptions = {
  hiddenPerTask: 64,
  epochs: 120,
  batch: 32,
  lr: 0.08,
  l1: 1e-2,
  weightDecay: 1e-5,
  seed: 1,
};

export class TrainingDiverged extends Error {}

/** Forward one sample through the container's layers (ReLU trunk). */
export function forward(c: Container, x: Float32Array, captureInto?: Float32Array): Float32Array {
  if (c.encrypted) throw new Error("forward needs a plaintext container");
  let cur = x;
  let base = 0;
  for (const layer of c.layers) {
    const { dIn, dHidden, dOut, wIn, bIn, wOutT } = layer;
    if (cur.length !== dIn) throw new Error(`input width ${cur.length} != ${dIn}`);
    const act = new Float32Array(dHidden);
    for (let n = 0; n < dHidden; n++) {
      let z = bIn[n];
      const row = n * dIn;
      for (let j = 0; j < dIn; j++) z += wIn[row + j] * cur[j];
      act[n] = z > 0 ? z : 0;
      if (captureInto) captureInto[base + n] += Math.abs(act[n]);
    }
    const out = new Float32Array(dOut);
    for (let n = 0; n < dHidden; n++) {
      const a = act[n];
      if (a === 0) continue;
      const row = n * dOut;
      for (let o = 0; o < dOut; o++) out[o] += a * wOutT[row + o];
    }
    cur = out;
    base += dHidden;
  }
  return cur;
}

function argmaxSlice(logits: Float32Array, start: number, len: number): number {
  let best = 0;
  let bestVal = -Infinity;
  for (let j = 0; j < len; j++) {
    if (logits[start + j] > bestVal) {
      bestVal = logits[start + j];
      best = j;
    }
  }
  return best;
}

/** Classification accuracy of one task on its held-out split. */
export function taskAccuracy(c: Container, suite: ToyTaskSuite, taskIndex: number): number {
  const samples = testSplit(suite, taskIndex);
  let correct = 0;
  for (const s of samples) {
    const logits = forward(c, s.x);
    if (argmaxSlice(logits, taskIndex * suite.classes, suite.classes) === s.label) correct++;
  }
  return correct / samples.length;
}

export function allAccuracies(c: Container, suite: ToyTaskSuite): Record<string, number> {
  const out: Record<string, number> = {};
  suite.tasks.forEach((t, i) => (out[t] = taskAccuracy(c, suite, i)));
  return out;
}

/** Trains the shared trunk; throws TrainingDiverged below the accuracy bar. */
export function trainSuite(
  suite: ToyTaskSuite,
  opts: Partial<TrainOptions> = {},
  minAccuracy = 0.8,
): Container {
  const o = { ...DEFAULT_TRAIN, ...opts };
  const rng = new Rng(o.seed * 2654435761 + 17);
  const k = suite.tasks.length;
  const dIn = suite.dIn;
  const dOut = suite.dOut;
  const hidden = o.hiddenPerTask * k;

  const wIn = new Float32Array(hidden * dIn);
  const bIn = new Float32Array(hidden);
  const wOutT = new Float32Array(hidden * dOut);
  const scaleIn = Math.sqrt(2 / dIn);
  for (let i = 0; i < wIn.length; i++) wIn[i] = scaleIn * rng.gauss();
  const scaleOut = Math.sqrt(2 / hidden);
  for (let i = 0; i < wOutT.length; i++) wOutT[i] = scaleOut * rng.gauss();

  const data: { x: Float32Array; label: number; task: number }[] = [];
  for (let t = 0; t < k; t++) {
    for (const s of trainSplit(suite, t)) data.push({ x: s.x, label: s.label, task: t });
  }
  const order = data.map((_, i) => i);

  const act = new Float32Array(hidden);
  const z = new Float32Array(hidden);
  const probs = new Float32Array(suite.classes);
  for (let epoch = 0; epoch < o.epochs; epoch++) {
    rng.shuffle(order);
    const lr = o.lr / (1 + epoch * 0.05);
    for (let start = 0; start < order.length; start += o.batch) {
      const end = Math.min(start + o.batch, order.length);
      for (let oi = start; oi < end; oi++) {
        const { x, label, task } = data[order[oi]];
        // forward
        for (let n = 0; n < hidden; n++) {
          let s = bIn[n];
          const row = n * dIn;
          for (let j = 0; j < dIn; j++) s += wIn[row + j] * x[j];
          z[n] = s;
          act[n] = s > 0 ? s : 0;
        }
        const sliceStart = task * suite.classes;
        let maxLogit = -Infinity;
        for (let j = 0; j < suite.classes; j++) {
          let v = 0;
          for (let n = 0; n < hidden; n++) v += act[n] * wOutT[n * dOut + sliceStart + j];
          probs[j] = v;
          if (v > maxLogit) maxLogit = v;
        }
        let sum = 0;
        for (let j = 0; j < suite.classes; j++) {
          probs[j] = Math.exp(probs[j] - maxLogit);
          sum += probs[j];
        }
        for (let j = 0; j < suite.classes; j++) probs[j] /= sum;
        probs[label] -= 1; // dlogits on the task's slice

        // backward
        for (let n = 0; n < hidden; n++) {
          const a = act[n];
          let da = 0;
          const row = n * dOut;
          if (a > 0) {
            for (let j = 0; j < suite.classes; j++) {
              da += wOutT[row + sliceStart + j] * probs[j];
              wOutT[row + sliceStart + j] -= lr * (a * probs[j] + o.weightDecay * wOutT[row + sliceStart + j]);
            }
            da += o.l1; // activation sparsity pressure
            const dz = da; // ReLU' = 1 here
            bIn[n] -= lr * dz;
            const wrow = n * dIn;
            for (let j = 0; j < dIn; j++) {
              wIn[wrow + j] -= lr * (dz * x[j] + o.weightDecay * wIn[wrow + j]);
            }
          }
        }
      }
    }
  }

  const layer: LayerWeights = { dIn, dHidden: hidden, dOut, wIn, bIn, wOutT };
  const model: Container = { dtype: Dtype.FLOAT32, encrypted: false, sigma: 0, layers: [layer] };
  const accs = allAccuracies(model, suite);
  for (const [task, acc] of Object.entries(accs)) {
    if (acc < minAccuracy) {
      throw new TrainingDiverged(`task ${task} reached only ${(acc * 100).toFixed(1)}%`);
    }
  }
  return model;
}

/** Per-task |activation| sums over the training split (trace material). */
export function captureTraces(c: Container, suite: ToyTaskSuite): Map<string, { sums: Float64Array; count: number }> {
  const n = neuronCount(c);
  const out = new Map<string, { sums: Float64Array; count: number }>();
  suite.tasks.forEach((task, t) => {
    const capture = new Float32Array(n);
    const samples = trainSplit(suite, t);
    for (const s of samples) forward(c, s.x, capture);
    out.set(task, { sums: Float64Array.from(capture), count: samples.length });
  });
  return out;
}
