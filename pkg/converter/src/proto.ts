/** Minimal protobuf wire-format reader (the subset ONNX files use). */

export const WIRE_VARINT = 0;
export const WIRE_I64 = 1;
export const WIRE_LEN = 2;
export const WIRE_I32 = 5;

export class ProtoReader {
  pos = 0;
  private view: DataView;

  constructor(readonly buf: Uint8Array) {
    this.view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  }

  get done(): boolean {
    return this.pos >= this.buf.length;
  }

  varint(): bigint {
    let result = 0n;
    let shift = 0n;
    for (;;) {
      if (this.pos >= this.buf.length) {
        throw new Error("varint runs past the end of the buffer");
      }
      const b = this.buf[this.pos++];
      result |= BigInt(b & 0x7f) << shift;
      if ((b & 0x80) === 0) return BigInt.asIntN(64, result);
      shift += 7n;
      if (shift > 63n) throw new Error("varint longer than 64 bits");
    }
  }

  tag(): { field: number; wire: number } {
    const t = Number(this.varint());
    return { field: t >>> 3, wire: t & 7 };
  }

  bytes(): Uint8Array {
    const len = Number(this.varint());
    if (this.pos + len > this.buf.length) {
      throw new Error("length-delimited field runs past the buffer");
    }
    const out = this.buf.subarray(this.pos, this.pos + len);
    this.pos += len;
    return out;
  }

  string(): string {
    return new TextDecoder().decode(this.bytes());
  }

  fixed32(): number {
    const v = this.view.getFloat32(this.pos, true);
    this.pos += 4;
    return v;
  }

  skip(wire: number): void {
    switch (wire) {
      case WIRE_VARINT:
        this.varint();
        break;
      case WIRE_I64:
        this.pos += 8;
        break;
      case WIRE_LEN:
        this.bytes();
        break;
      case WIRE_I32:
        this.pos += 4;
        break;
      default:
        throw new Error(`unsupported wire type ${wire}`);
    }
  }
}

/** Packed or single varint int64 field accumulating into a list. */
export function readInts(r: ProtoReader, wire: number, into: bigint[]): void {
  if (wire === WIRE_LEN) {
    const sub = new ProtoReader(r.bytes());
    while (!sub.done) into.push(sub.varint());
  } else {
    into.push(r.varint());
  }
}

export function readFloats(r: ProtoReader, wire: number, into: number[]): void {
  if (wire === WIRE_LEN) {
    const sub = new ProtoReader(r.bytes());
    while (!sub.done) into.push(sub.fixed32());
  } else {
    into.push(r.fixed32());
  }
}
