/** Minimal RIFF/WAVE codec: PCM16 and float32, the two formats the core
 * reads and writes. Samples are interleaved; mono is the common case. */

import { readFileSync, writeFileSync } from "node:fs";

export interface Audio {
  samples: Float64Array;
  sampleRate: number;
  channels: number;
}

const WAVE_FORMAT_PCM = 1;
const WAVE_FORMAT_IEEE_FLOAT = 3;

export function decodeWav(raw: Buffer): Audio {
  if (raw.length < 12 || raw.toString("ascii", 0, 4) !== "RIFF" ||
      raw.toString("ascii", 8, 12) !== "WAVE") {
    throw new Error("not a RIFF/WAVE file");
  }
  let offset = 12;
  let fmt: { tag: number; channels: number; rate: number; bits: number } | null = null;
  let data: { start: number; size: number } | null = null;
  while (offset + 8 <= raw.length) {
    const id = raw.toString("ascii", offset, offset + 4);
    const size = raw.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (id === "fmt " && size >= 16) {
      fmt = {
        tag: raw.readUInt16LE(body),
        channels: raw.readUInt16LE(body + 2),
        rate: raw.readUInt32LE(body + 4),
        bits: raw.readUInt16LE(body + 14),
      };
    } else if (id === "data") {
      data = { start: body, size: Math.min(size, raw.length - body) };
    }
    offset = body + size + (size % 2);
  }
  if (!fmt || !data) throw new Error("missing fmt or data chunk");

  let samples: Float64Array;
  if (fmt.tag === WAVE_FORMAT_PCM && fmt.bits === 16) {
    const count = Math.floor(data.size / 2);
    samples = new Float64Array(count);
    for (let i = 0; i < count; i++) {
      samples[i] = raw.readInt16LE(data.start + 2 * i) / 32768;
    }
  } else if (fmt.tag === WAVE_FORMAT_IEEE_FLOAT && fmt.bits === 32) {
    const count = Math.floor(data.size / 4);
    samples = new Float64Array(count);
    for (let i = 0; i < count; i++) {
      samples[i] = raw.readFloatLE(data.start + 4 * i);
    }
  } else {
    throw new Error(`unsupported WAV codec (tag ${fmt.tag}, ${fmt.bits} bits)`);
  }
  return { samples, sampleRate: fmt.rate, channels: fmt.channels };
}

export function readWav(path: string): Audio {
  return decodeWav(readFileSync(path));
}

/** Encode as float32 WAV, the lossless interchange format of the core CLI. */
export function encodeWav(audio: Audio): Buffer {
  const n = audio.samples.length;
  const payload = Buffer.alloc(4 * n);
  for (let i = 0; i < n; i++) payload.writeFloatLE(audio.samples[i], 4 * i);

  const blockAlign = 4 * audio.channels;
  const header = Buffer.alloc(44);
  header.write("RIFF", 0, "ascii");
  header.writeUInt32LE(36 + payload.length, 4);
  header.write("WAVE", 8, "ascii");
  header.write("fmt ", 12, "ascii");
  header.writeUInt32LE(16, 16);
  header.writeUInt16LE(WAVE_FORMAT_IEEE_FLOAT, 20);
  header.writeUInt16LE(audio.channels, 22);
  header.writeUInt32LE(audio.sampleRate, 24);
  header.writeUInt32LE(audio.sampleRate * blockAlign, 28);
  header.writeUInt16LE(blockAlign, 32);
  header.writeUInt16LE(32, 34);
  header.write("data", 36, "ascii");
  header.writeUInt32LE(payload.length, 40);
  return Buffer.concat([header, payload]);
}

export function writeWav(path: string, audio: Audio): void {
  writeFileSync(path, encodeWav(audio));
}
