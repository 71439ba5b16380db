/**
 * Thin wrapper around the primary toolkit's CLI. The harness only touches
 * the primary through its external interfaces: .snm/.trace/.abk/.ask/.kmap
 * files and the `neuronlock` subcommands.
 */

import { spawnSync } from "node:child_process";
import { join } from "node:path";

export const PRIMARY_BIN = process.env.NEURONLOCK_BIN ?? "neuronlock";

export interface RunResult {
  status: number;
  stdout: string;
  stderr: string;
}

export function runPrimary(args: string[], allowFailure = false): RunResult {
  const res = spawnSync(PRIMARY_BIN, args, { encoding: "utf-8" });
  if (res.error) {
    throw new Error(`failed to launch ${PRIMARY_BIN}: ${res.error.message}`);
  }
  const out: RunResult = {
    status: res.status ?? -1,
    stdout: res.stdout ?? "",
    stderr: res.stderr ?? "",
  };
  if (!allowFailure && out.status !== 0) {
    throw new Error(
      `${PRIMARY_BIN} ${args.join(" ")} exited ${out.status}\n${out.stdout}${out.stderr}`,
    );
  }
  return out;
}

export function primaryAvailable(): boolean {
  const res = spawnSync(PRIMARY_BIN, ["--help"], { encoding: "utf-8" });
  return !res.error && res.status === 0;
}

export interface EncryptArtifacts {
  model: string;
  bundle: string;
  kmap: string;
  thresholds: string;
  msk: string;
}

export function encrypt(
  modelPath: string,
  tracePaths: string[],
  policyPath: string,
  outDir: string,
  seed?: number,
): EncryptArtifacts {
  const art: EncryptArtifacts = {
    model: join(outDir, "enc.snm"),
    bundle: join(outDir, "bundle.abk"),
    kmap: join(outDir, "f.kmap"),
    thresholds: join(outDir, "thresholds.json"),
    msk: join(outDir, "master.msk"),
  };
  const args = [
    "encrypt", "--model", modelPath, "--policy-file", policyPath,
    "--out-model", art.model, "--out-bundle", art.bundle,
    "--out-kmap", art.kmap, "--out-thresholds", art.thresholds,
    "--out-msk", art.msk,
  ];
  for (const t of tracePaths) args.push("--trace", t);
  if (seed !== undefined) args.push("--seed", String(seed));
  runPrimary(args);
  return art;
}

export function keygen(mskPath: string, attributes: string[], outPath: string): void {
  const args = ["keygen", "--msk", mskPath, "--out", outPath];
  for (const a of attributes) args.push("--attr", a);
  runPrimary(args);
}

/** exit status 0 = full decryption, 2 = partial, 3 = zero. */
export function decrypt(
  art: EncryptArtifacts,
  keyPath: string,
  outPath: string,
  mode: "te" | "ce" = "ce",
): number {
  const args = [
    "decrypt", "--model", art.model, "--bundle", art.bundle,
    "--key", keyPath, "--mode", mode, "--out", outPath,
  ];
  if (mode === "ce") args.push("--kmap", art.kmap);
  const res = runPrimary(args, true);
  if (![0, 2, 3].includes(res.status)) {
    throw new Error(`decrypt failed (${res.status}): ${res.stdout}${res.stderr}`);
  }
  return res.status;
}
