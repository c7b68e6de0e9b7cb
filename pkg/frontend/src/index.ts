/** Script-level bindings over the enhancement core.
 *
 * A handle wraps one checkpoint; denoise/selective/separate accept WAV
 * paths or in-memory arrays and return the enhanced samples. All work is
 * delegated to the core CLI, so results are identical to command-line
 * runs; the CLI writes float32 WAVs precisely so this round trip is
 * lossless. Core diagnostics travel inside thrown errors.
 */

import { spawnSync } from "node:child_process";
import { existsSync, mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { Audio, readWav, writeWav } from "./wav.js";

export { Audio, readWav, writeWav, decodeWav, encodeWav } from "./wav.js";

export type Task = "denoise" | "selective" | "separate";

export interface LoadOptions {
  /** Core executable; defaults to `nhans` on PATH. */
  cliPath?: string;
}

export interface ArrayInput {
  samples: Float32Array | Float64Array | number[];
  sampleRate: number;
}

/** WAV file path, or samples plus their rate. */
export type AudioInput = string | ArrayInput;

export class CoreError extends Error {
  constructor(message: string, readonly stderr: string) {
    super(message);
    this.name = "CoreError";
  }
}

function run(cliPath: string, args: string[]): string {
  const proc = spawnSync(cliPath, args, { encoding: "utf8" });
  if (proc.error) {
    throw new CoreError(`failed to start ${cliPath}: ${proc.error.message}`, "");
  }
  if (proc.status !== 0) {
    const detail = (proc.stderr || "").trim();
    throw new CoreError(
      `${cliPath} ${args[0]} exited with code ${proc.status}` +
        (detail ? `: ${detail}` : ""),
      proc.stderr ?? ""
    );
  }
  return proc.stdout ?? "";
}

/** Version string of the core the handle talks to. */
export function coreVersion(options: LoadOptions = {}): string {
  const cliPath = options.cliPath ?? "nhans";
  const proc = spawnSync(cliPath, ["--version"], { encoding: "utf8" });
  if (proc.error || proc.status !== 0) {
    throw new CoreError(`could not query ${cliPath} --version`,
                        proc.stderr ?? "");
  }
  // "nhans X.Y.Z"
  const out = (proc.stdout || proc.stderr || "").trim();
  return out.split(/\s+/).pop() ?? "";
}

export class ModelHandle {
  private open = true;

  constructor(readonly modelPath: string, readonly cliPath: string) {}

  get isOpen(): boolean {
    return this.open;
  }

  close(): void {
    this.open = false;
  }

  /** @internal */
  assertOpen(): void {
    if (!this.open) {
      throw new Error(`handle for ${this.modelPath} is closed`);
    }
  }
}

export function load(modelPath: string, options: LoadOptions = {}): ModelHandle {
  if (!existsSync(modelPath)) {
    throw new Error(`no such checkpoint: ${modelPath}`);
  }
  return new ModelHandle(modelPath, options.cliPath ?? "nhans");
}

function materialize(input: AudioInput, dir: string, name: string): string {
  if (typeof input === "string") return input;
  const samples = input.samples instanceof Float64Array
    ? input.samples
    : Float64Array.from(input.samples);
  if (samples.length === 0) throw new Error(`${name} is empty`);
  const path = join(dir, `${name}.wav`);
  writeWav(path, { samples, sampleRate: input.sampleRate, channels: 1 });
  return path;
}

function enhance(handle: ModelHandle, task: Task, noisy: AudioInput,
                 pos: AudioInput | null, neg: AudioInput): Audio {
  handle.assertOpen();
  const dir = mkdtempSync(join(tmpdir(), "nhans-"));
  try {
    const args = [
      task,
      "--input", materialize(noisy, dir, "noisy"),
      "--neg", materialize(neg, dir, "neg"),
      "--model", handle.modelPath,
      "--output", join(dir, "out.wav"),
    ];
    if (pos !== null) args.push("--pos", materialize(pos, dir, "pos"));
    run(handle.cliPath, args);
    return readWav(join(dir, "out.wav"));
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/** Suppress all background noise; neg exemplifies what to remove. */
export function denoise(handle: ModelHandle, noisy: AudioInput,
                        neg: AudioInput): Audio {
  return enhance(handle, "denoise", noisy, null, neg);
}

/** Remove the neg noise while keeping the pos noise. */
export function selective(handle: ModelHandle, noisy: AudioInput,
                          pos: AudioInput, neg: AudioInput): Audio {
  return enhance(handle, "selective", noisy, pos, neg);
}

/** Extract the pos speaker from a two-speaker mixture. */
export function separate(handle: ModelHandle, mix: AudioInput,
                         targetRef: AudioInput, interferenceRef: AudioInput): Audio {
  return enhance(handle, "separate", mix, targetRef, interferenceRef);
}

export interface EvaluateOptions {
  grid?: string;
  split?: string;
  pairs?: number;
  seed?: number;
  figures?: boolean;
}

/** Score a checkpoint over a manifest; returns the report directory. */
export function evaluate(handle: ModelHandle, manifestPath: string,
                         outputDir: string,
                         options: EvaluateOptions = {}): string {
  handle.assertOpen();
  const args = ["evaluate", "--model", handle.modelPath,
                "--input", manifestPath, "--output", outputDir];
  if (options.grid) args.push("--grid", options.grid);
  if (options.split) args.push("--split", options.split);
  if (options.pairs !== undefined) args.push("--pairs", String(options.pairs));
  if (options.seed !== undefined) args.push("--seed", String(options.seed));
  if (options.figures === false) args.push("--no-figures");
  run(handle.cliPath, args);
  return outputDir;
}
