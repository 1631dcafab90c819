/**
 * Binary writers (and readers, for round-trip checks) for the explanation
 * toolkit's interchange formats.
 *
 * FEX1 — feature bundle: header `FEX1 | u32 version | u32 n | u32 C | u32 m |
 * u32 hs | u32 ws` (28 bytes), then per image `u32 trueLabel | u32
 * inferredLabel | u16 pathLen | path | f32[n] g | f32[hs*ws*n] spatial`
 * with spatial maps laid out row, col, filter. CHD1 — classifier head:
 * header `CHD1 | u32 version | u32 n | u32 C`, then `f32[n*C]` row-major
 * weights and `f32[C]` bias. All integers and floats little-endian.
 */

export const FORMAT_VERSION = 1;

export interface ImageRecordData {
  trueLabel: number;
  inferredLabel: number;
  sourcePath: string;
  /** length n, the per-filter GAP activations, all >= 0 */
  g: Float32Array;
  /** optional length hs*ws*n, row-major (row, col, filter) */
  spatial?: Float32Array;
}

export interface FeatureBundleData {
  n: number;
  numClasses: number;
  spatialHeight: number;
  spatialWidth: number;
  images: ImageRecordData[];
}

export interface ClassifierHeadData {
  n: number;
  numClasses: number;
  /** n*C row-major: weights[filter*C + class] */
  weights: Float32Array;
  /** length C */
  bias: Float32Array;
}

class ByteWriter {
  private chunks: Uint8Array[] = [];

  magic(text: string): void {
    this.chunks.push(new TextEncoder().encode(text));
  }

  u32(value: number): void {
    const buf = new DataView(new ArrayBuffer(4));
    buf.setUint32(0, value, true);
    this.chunks.push(new Uint8Array(buf.buffer));
  }

  u16(value: number): void {
    const buf = new DataView(new ArrayBuffer(2));
    buf.setUint16(0, value, true);
    this.chunks.push(new Uint8Array(buf.buffer));
  }

  bytes(data: Uint8Array): void {
    this.chunks.push(data);
  }

  f32Array(values: Float32Array): void {
    // Float32Array is platform-endian; serialize explicitly little-endian.
    const buf = new DataView(new ArrayBuffer(values.length * 4));
    for (let i = 0; i < values.length; i++) {
      buf.setFloat32(i * 4, values[i], true);
    }
    this.chunks.push(new Uint8Array(buf.buffer));
  }

  concat(): Uint8Array {
    const total = this.chunks.reduce((acc, c) => acc + c.length, 0);
    const out = new Uint8Array(total);
    let pos = 0;
    for (const chunk of this.chunks) {
      out.set(chunk, pos);
      pos += chunk.length;
    }
    return out;
  }
}

export class FormatError extends Error {
  constructor(message: string, public readonly offset?: number) {
    super(offset === undefined ? message : `${message} (at byte offset ${offset})`);
    this.name = 'FormatError';
  }
}

export function encodeFeatureBundle(bundle: FeatureBundleData): Uint8Array {
  const { n, numClasses, spatialHeight: hs, spatialWidth: ws, images } = bundle;
  if ((hs === 0) !== (ws === 0)) {
    throw new FormatError(`spatial dims must both be zero or both positive, got ${hs}x${ws}`);
  }
  const w = new ByteWriter();
  w.magic('FEX1');
  for (const v of [FORMAT_VERSION, n, numClasses, images.length, hs, ws]) w.u32(v);
  for (const rec of images) {
    if (rec.g.length !== n) {
      throw new FormatError(`image feature length ${rec.g.length}, expected ${n}`);
    }
    for (const v of rec.g) {
      if (!(v >= 0)) throw new FormatError(`negative or non-finite feature value ${v}`);
    }
    const path = new TextEncoder().encode(rec.sourcePath);
    if (path.length > 0xffff) throw new FormatError('source path longer than 65535 bytes');
    w.u32(rec.trueLabel);
    w.u32(rec.inferredLabel);
    w.u16(path.length);
    w.bytes(path);
    w.f32Array(rec.g);
    if (hs > 0) {
      if (!rec.spatial || rec.spatial.length !== hs * ws * n) {
        throw new FormatError('spatial map missing or of the wrong size');
      }
      w.f32Array(rec.spatial);
    }
  }
  return w.concat();
}

export function encodeClassifierHead(head: ClassifierHeadData): Uint8Array {
  if (head.weights.length !== head.n * head.numClasses || head.bias.length !== head.numClasses) {
    throw new FormatError('classifier weight/bias sizes inconsistent with n and C');
  }
  const w = new ByteWriter();
  w.magic('CHD1');
  for (const v of [FORMAT_VERSION, head.n, head.numClasses]) w.u32(v);
  w.f32Array(head.weights);
  w.f32Array(head.bias);
  return w.concat();
}

class ByteReader {
  private view: DataView;
  pos = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(count: number, what: string): void {
    if (this.pos + count > this.data.length) {
      throw new FormatError(`truncated while reading ${what}`, this.pos);
    }
  }

  expectMagic(magic: string): void {
    this.need(magic.length, 'magic');
    const got = new TextDecoder().decode(this.data.subarray(0, magic.length));
    if (got !== magic) throw new FormatError(`bad magic ${got}, expected ${magic}`, 0);
    this.pos += magic.length;
  }

  u32(what: string): number {
    this.need(4, what);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u16(what: string): number {
    this.need(2, what);
    const v = this.view.getUint16(this.pos, true);
    this.pos += 2;
    return v;
  }

  string(length: number, what: string): string {
    this.need(length, what);
    const s = new TextDecoder().decode(this.data.subarray(this.pos, this.pos + length));
    this.pos += length;
    return s;
  }

  f32Array(count: number, what: string): Float32Array {
    this.need(count * 4, what);
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) out[i] = this.view.getFloat32(this.pos + i * 4, true);
    this.pos += count * 4;
    return out;
  }

  done(): void {
    if (this.pos !== this.data.length) {
      throw new FormatError(`${this.data.length - this.pos} trailing bytes`, this.pos);
    }
  }
}

export function decodeFeatureBundle(data: Uint8Array): FeatureBundleData {
  const r = new ByteReader(data);
  r.expectMagic('FEX1');
  const version = r.u32('version');
  if (version !== FORMAT_VERSION) throw new FormatError(`unsupported version ${version}`, 4);
  const n = r.u32('filter count');
  const numClasses = r.u32('class count');
  const m = r.u32('image count');
  const hs = r.u32('spatial height');
  const ws = r.u32('spatial width');
  const images: ImageRecordData[] = [];
  for (let i = 0; i < m; i++) {
    const trueLabel = r.u32(`image ${i} true label`);
    const inferredLabel = r.u32(`image ${i} inferred label`);
    const pathLen = r.u16(`image ${i} path length`);
    const sourcePath = r.string(pathLen, `image ${i} path`);
    const g = r.f32Array(n, `image ${i} features`);
    const spatial = hs > 0 ? r.f32Array(hs * ws * n, `image ${i} spatial maps`) : undefined;
    images.push({ trueLabel, inferredLabel, sourcePath, g, spatial });
  }
  r.done();
  return { n, numClasses, spatialHeight: hs, spatialWidth: ws, images };
}

export function decodeClassifierHead(data: Uint8Array): ClassifierHeadData {
  const r = new ByteReader(data);
  r.expectMagic('CHD1');
  const version = r.u32('version');
  if (version !== FORMAT_VERSION) throw new FormatError(`unsupported version ${version}`, 4);
  const n = r.u32('filter count');
  const numClasses = r.u32('class count');
  const weights = r.f32Array(n * numClasses, 'weights');
  const bias = r.f32Array(numClasses, 'bias');
  r.done();
  return { n, numClasses, weights, bias };
}
