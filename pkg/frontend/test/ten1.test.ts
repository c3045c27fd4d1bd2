import { describe, expect, it } from "vitest";

import { decodeTen1, encodeTen1, tensorFromArray } from "../src/ten1.js";

describe("TEN1 codec", () => {
  it("round-trips a tensor bit-exactly", () => {
    const t = tensorFromArray([1, 2, 2, 3], [1, -2, 3.5, 0.25, -0.125, 6, 7, 8, 9, 10, 11, 12]);
    const decoded = decodeTen1(encodeTen1(t));
    expect(decoded.dims).toEqual(t.dims);
    expect(Array.from(decoded.data)).toEqual(Array.from(t.data));
  });

  it("writes the documented header layout", () => {
    const bytes = encodeTen1(tensorFromArray([1, 1, 1, 2], [0, 1]));
    expect(Array.from(bytes.subarray(0, 4))).toEqual([0x54, 0x45, 0x4e, 0x31]);
    const view = new DataView(bytes.buffer);
    expect(view.getUint32(4, true)).toBe(4);
    expect(view.getUint32(8, true)).toBe(1);
    expect(view.getUint32(20, true)).toBe(2);
    expect(bytes.length).toBe(24 + 8);
  });

  it("rejects bad magic", () => {
    const bytes = encodeTen1(tensorFromArray([1, 1, 1, 1], [5]));
    bytes[0] = 0x58;
    expect(() => decodeTen1(bytes)).toThrow(/magic/);
  });

  it("rejects truncated payloads", () => {
    const bytes = encodeTen1(tensorFromArray([1, 1, 1, 2], [1, 2]));
    expect(() => decodeTen1(bytes.subarray(0, bytes.length - 4))).toThrow(/length/);
  });

  it("rejects mismatched value counts", () => {
    expect(() => tensorFromArray([1, 1, 1, 3], [1, 2])).toThrow(/count/);
  });
});
