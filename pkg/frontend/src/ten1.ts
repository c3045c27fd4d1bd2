/**
 * TEN1 binary tensor format.
 *
 * Layout: 4-byte magic "TEN1", uint32 LE rank (always 4), four uint32 LE
 * dims (n, c, h, w), then float32 LE payload in row-major order.
 */

export interface Tensor4 {
  dims: [number, number, number, number];
  data: Float32Array;
}

const MAGIC = new Uint8Array([0x54, 0x45, 0x4e, 0x31]); // "TEN1"
const HEADER_BYTES = 24;

export function tensorFromArray(dims: [number, number, number, number], values: ArrayLike<number>): Tensor4 {
  const count = dims[0] * dims[1] * dims[2] * dims[3];
  if (values.length !== count) {
    throw new Error(`value count ${values.length} does not match dims product ${count}`);
  }
  return { dims, data: Float32Array.from(values) };
}

export function encodeTen1(t: Tensor4): Uint8Array {
  const count = t.dims[0] * t.dims[1] * t.dims[2] * t.dims[3];
  if (t.data.length !== count) {
    throw new Error(`payload length ${t.data.length} does not match dims product ${count}`);
  }
  const out = new Uint8Array(HEADER_BYTES + 4 * count);
  out.set(MAGIC, 0);
  const view = new DataView(out.buffer);
  view.setUint32(4, 4, true);
  for (let i = 0; i < 4; i++) {
    view.setUint32(8 + 4 * i, t.dims[i], true);
  }
  for (let i = 0; i < count; i++) {
    view.setFloat32(HEADER_BYTES + 4 * i, t.data[i], true);
  }
  return out;
}

export function decodeTen1(bytes: Uint8Array): Tensor4 {
  if (bytes.length < HEADER_BYTES) {
    throw new Error("TEN1 blob truncated: header is 24 bytes");
  }
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== MAGIC[i]) {
      throw new Error("bad magic: expected TEN1");
    }
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const rank = view.getUint32(4, true);
  if (rank !== 4) {
    throw new Error(`TEN1 rank must be 4, got ${rank}`);
  }
  const dims: [number, number, number, number] = [
    view.getUint32(8, true),
    view.getUint32(12, true),
    view.getUint32(16, true),
    view.getUint32(20, true),
  ];
  const count = dims[0] * dims[1] * dims[2] * dims[3];
  const expected = HEADER_BYTES + 4 * count;
  if (bytes.length !== expected) {
    throw new Error(`TEN1 payload length mismatch: expected ${expected} bytes, got ${bytes.length}`);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = view.getFloat32(HEADER_BYTES + 4 * i, true);
  }
  return { dims, data };
}
