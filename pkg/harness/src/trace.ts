/**
 * .trace file IO: magic "SNTRACE1", task name (u16 length + utf8), neuron
 * count u64, float64 sums, sample count u64 — all little-endian, matching
 * the selector's trace reader byte for byte.
 */

export const TRACE_MAGIC = "SNTRACE1";

export interface Trace {
  task: string;
  sums: Float64Array;
  count: number;
}

export function writeTrace(trace: Trace): Buffer {
  const name = Buffer.from(trace.task, "utf-8");
  const buf = Buffer.alloc(8 + 2 + name.length + 8 + trace.sums.length * 8 + 8);
  let pos = 0;
  buf.write(TRACE_MAGIC, 0, "ascii"); pos += 8;
  buf.writeUInt16LE(name.length, pos); pos += 2;
  name.copy(buf, pos); pos += name.length;
  buf.writeBigUInt64LE(BigInt(trace.sums.length), pos); pos += 8;
  for (let i = 0; i < trace.sums.length; i++) {
    buf.writeDoubleLE(trace.sums[i], pos); pos += 8;
  }
  buf.writeBigUInt64LE(BigInt(trace.count), pos);
  return buf;
}

export function readTrace(buf: Buffer): Trace {
  if (buf.toString("ascii", 0, 8) !== TRACE_MAGIC) throw new Error("not a SNTRACE1 file");
  let pos = 8;
  const nameLen = buf.readUInt16LE(pos); pos += 2;
  const task = buf.toString("utf-8", pos, pos + nameLen); pos += nameLen;
  const n = Number(buf.readBigUInt64LE(pos)); pos += 8;
  const sums = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    sums[i] = buf.readDoubleLE(pos); pos += 8;
  }
  const count = Number(buf.readBigUInt64LE(pos));
  return { task, sums, count };
}
