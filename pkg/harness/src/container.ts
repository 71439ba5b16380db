/**
 * Reader/writer for the .snm neuron-structured weight container.
 *
 * Layout (little-endian): magic "SNMODEL1", version u16, dtype u8
 * (0=FLOAT32, 1=FLOAT16, 2=INT8), encrypted u8, sigma u8 (0=ReLU),
 * nonce u64 iff encrypted, layer count u16, layer table of
 * (dIn, dHidden, dOut) u32 triples, then per layer the tensors
 * W_IN (dHidden x dIn), B_IN (dHidden), W_OUT_T (dHidden x dOut),
 * then an optional head section (u64 byte length + payload).
 *
 * The harness trains in float32; FLOAT16 and INT8 containers are
 * converted on read/write so every dtype the toolkit ships is coverable
 * from this side too.
 */

export const MAGIC = "SNMODEL1";
export const VERSION = 1;

export enum Dtype {
  FLOAT32 = 0,
  FLOAT16 = 1,
  INT8 = 2,
}

export const ELEMENT_SIZE: Record<Dtype, number> = {
  [Dtype.FLOAT32]: 4,
  [Dtype.FLOAT16]: 2,
  [Dtype.INT8]: 1,
};

export interface LayerSpec {
  dIn: number;
  dHidden: number;
  dOut: number;
}

export interface LayerWeights extends LayerSpec {
  /** row-major (dHidden x dIn): each neuron's input row is contiguous */
  wIn: Float32Array;
  bIn: Float32Array;
  /** row-major (dHidden x dOut): W_OUT stored transposed */
  wOutT: Float32Array;
}

export interface Container {
  dtype: Dtype;
  encrypted: boolean;
  sigma: number;
  nonce?: bigint;
  layers: LayerWeights[];
  head?: Uint8Array;
}

export function neuronCount(c: Container): number {
  return c.layers.reduce((acc, l) => acc + l.dHidden, 0);
}

// ---- float16 conversion -----------------------------------------------------

const f32buf = new Float32Array(1);
const u32buf = new Uint32Array(f32buf.buffer);

export function f32ToF16Bits(value: number): number {
  f32buf[0] = value;
  const x = u32buf[0];
  const sign = (x >>> 16) & 0x8000;
  let exp = (x >>> 23) & 0xff;
  let mant = x & 0x7fffff;
  if (exp === 0xff) {
    return sign | 0x7c00 | (mant ? 0x200 : 0); // inf / nan
  }
  let e16 = exp - 127 + 15;
  if (e16 >= 0x1f) return sign | 0x7c00; // overflow -> inf
  if (e16 <= 0) {
    if (e16 < -10) return sign; // underflow -> zero
    mant |= 0x800000;
    const shift = 14 - e16;
    const half = mant >>> shift;
    const rest = mant & ((1 << shift) - 1);
    return sign | (half + (rest > 1 << (shift - 1) ? 1 : 0));
  }
  const half = sign | (e16 << 10) | (mant >>> 13);
  return half + ((mant >>> 12) & 1); // round-to-nearest
}

export function f16BitsToF32(bits: number): number {
  const sign = (bits & 0x8000) ? -1 : 1;
  const exp = (bits >>> 10) & 0x1f;
  const mant = bits & 0x3ff;
  if (exp === 0) return sign * mant * 2 ** -24;
  if (exp === 0x1f) return mant ? NaN : sign * Infinity;
  return sign * (1 + mant / 1024) * 2 ** (exp - 15);
}

// ---- tensor (de)serialization --------------------------------------------------

function writeTensor(buf: Buffer, offset: number, values: Float32Array, dtype: Dtype): number {
  const view = new DataView(buf.buffer, buf.byteOffset + offset, buf.length - offset);
  if (dtype === Dtype.FLOAT32) {
    for (let i = 0; i < values.length; i++) view.setFloat32(i * 4, values[i], true);
    return offset + values.length * 4;
  }
  if (dtype === Dtype.FLOAT16) {
    for (let i = 0; i < values.length; i++) view.setUint16(i * 2, f32ToF16Bits(values[i]), true);
    return offset + values.length * 2;
  }
  for (let i = 0; i < values.length; i++) {
    view.setInt8(i, Math.max(-127, Math.min(127, Math.round(values[i]))));
  }
  return offset + values.length;
}

function readTensor(buf: Buffer, offset: number, count: number, dtype: Dtype): [Float32Array, number] {
  const view = new DataView(buf.buffer, buf.byteOffset + offset, buf.length - offset);
  const out = new Float32Array(count);
  if (dtype === Dtype.FLOAT32) {
    for (let i = 0; i < count; i++) out[i] = view.getFloat32(i * 4, true);
    return [out, offset + count * 4];
  }
  if (dtype === Dtype.FLOAT16) {
    for (let i = 0; i < count; i++) out[i] = f16BitsToF32(view.getUint16(i * 2, true));
    return [out, offset + count * 2];
  }
  for (let i = 0; i < count; i++) out[i] = view.getInt8(i);
  return [out, offset + count];
}

// ---- container (de)serialization -------------------------------------------------

export function writeContainer(c: Container): Buffer {
  const es = ELEMENT_SIZE[c.dtype];
  let body = 0;
  for (const l of c.layers) body += l.dHidden * (l.dIn + 1 + l.dOut) * es;
  const headerLen = 8 + 2 + 1 + 1 + 1 + (c.encrypted ? 8 : 0) + 2 + c.layers.length * 12;
  const tailLen = c.head ? 8 + c.head.length : 0;
  const buf = Buffer.alloc(headerLen + body + tailLen);
  let pos = 0;
  buf.write(MAGIC, 0, "ascii");
  pos += 8;
  buf.writeUInt16LE(VERSION, pos); pos += 2;
  buf.writeUInt8(c.dtype, pos); pos += 1;
  buf.writeUInt8(c.encrypted ? 1 : 0, pos); pos += 1;
  buf.writeUInt8(c.sigma, pos); pos += 1;
  if (c.encrypted) {
    buf.writeBigUInt64LE(c.nonce ?? 0n, pos); pos += 8;
  }
  buf.writeUInt16LE(c.layers.length, pos); pos += 2;
  for (const l of c.layers) {
    buf.writeUInt32LE(l.dIn, pos); pos += 4;
    buf.writeUInt32LE(l.dHidden, pos); pos += 4;
    buf.writeUInt32LE(l.dOut, pos); pos += 4;
  }
  for (const l of c.layers) {
    pos = writeTensor(buf, pos, l.wIn, c.dtype);
    pos = writeTensor(buf, pos, l.bIn, c.dtype);
    pos = writeTensor(buf, pos, l.wOutT, c.dtype);
  }
  if (c.head) {
    buf.writeBigUInt64LE(BigInt(c.head.length), pos); pos += 8;
    buf.set(c.head, pos);
  }
  return buf;
}

export function readContainer(buf: Buffer): Container {
  if (buf.length < 15 || buf.toString("ascii", 0, 8) !== MAGIC) {
    throw new Error("not a SNMODEL1 container");
  }
  let pos = 8;
  const version = buf.readUInt16LE(pos); pos += 2;
  if (version !== VERSION) throw new Error(`unsupported container version ${version}`);
  const dtype = buf.readUInt8(pos) as Dtype; pos += 1;
  if (!(dtype in ELEMENT_SIZE)) throw new Error(`unknown dtype tag ${dtype}`);
  const encrypted = buf.readUInt8(pos) === 1; pos += 1;
  const sigma = buf.readUInt8(pos); pos += 1;
  let nonce: bigint | undefined;
  if (encrypted) {
    nonce = buf.readBigUInt64LE(pos); pos += 8;
  }
  const nLayers = buf.readUInt16LE(pos); pos += 2;
  const specs: LayerSpec[] = [];
  for (let i = 0; i < nLayers; i++) {
    specs.push({
      dIn: buf.readUInt32LE(pos),
      dHidden: buf.readUInt32LE(pos + 4),
      dOut: buf.readUInt32LE(pos + 8),
    });
    pos += 12;
  }
  const es = ELEMENT_SIZE[dtype];
  const body = specs.reduce((acc, s) => acc + s.dHidden * (s.dIn + 1 + s.dOut) * es, 0);
  if (buf.length < pos + body) {
    throw new Error(`tensor body truncated: need ${body} bytes, have ${buf.length - pos}`);
  }
  const layers: LayerWeights[] = [];
  for (const s of specs) {
    let wIn: Float32Array, bIn: Float32Array, wOutT: Float32Array;
    [wIn, pos] = readTensor(buf, pos, s.dHidden * s.dIn, dtype);
    [bIn, pos] = readTensor(buf, pos, s.dHidden, dtype);
    [wOutT, pos] = readTensor(buf, pos, s.dHidden * s.dOut, dtype);
    layers.push({ ...s, wIn, bIn, wOutT });
  }
  let head: Uint8Array | undefined;
  if (pos < buf.length) {
    const headLen = Number(buf.readBigUInt64LE(pos)); pos += 8;
    if (pos + headLen !== buf.length) throw new Error("head section length mismatch");
    head = buf.subarray(pos);
  }
  return { dtype, encrypted, sigma, nonce, layers, head };
}
