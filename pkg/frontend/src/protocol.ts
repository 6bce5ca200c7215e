/**
 * Length-prefixed binary wire protocol for tile streaming.
 *
 * Every frame is a 4-byte big-endian payload length followed by the
 * payload; the payload's first byte is the frame type. HELLO and ERROR
 * bodies are UTF-8 JSON; BATCH bodies are a u32 tile count followed by
 * per-tile records (u32 metadata length, metadata JSON, raw RGB8
 * row-major pixels).
 */

export const FRAME_HELLO = 0x01;
export const FRAME_NEXT = 0x02;
export const FRAME_BATCH = 0x03;
export const FRAME_ERROR = 0x7f;

export const SERVER_MAGIC = "MDNTTILE";
export const PROTOCOL_VERSION = 1;
export const MAX_FRAME = 1 << 30;

export class ProtocolError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolError";
  }
}

export class HandshakeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "HandshakeError";
  }
}

export class StreamClosed extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StreamClosed";
  }
}

export interface ServerHello {
  magic: string;
  version: number;
  batch_size: number;
  seed: number;
  tile_size: number;
}

export interface TileMeta {
  dataset: string;
  slide_id: string;
  x: number;
  y: number;
  mpp: number;
  width: number;
  height: number;
  tile_index: number;
  hed_alpha: number[] | null;
  hed_beta: number[] | null;
}

export interface TileRecord {
  meta: TileMeta;
  /** Raw RGB8 row-major pixels, width * height * 3 bytes. */
  pixels: Uint8Array;
}

export function encodeFrame(frameType: number, body: Buffer = Buffer.alloc(0)): Buffer {
  const frame = Buffer.alloc(5 + body.length);
  frame.writeUInt32BE(1 + body.length, 0);
  frame.writeUInt8(frameType, 4);
  body.copy(frame, 5);
  return frame;
}

export function encodeJsonFrame(frameType: number, obj: unknown): Buffer {
  return encodeFrame(frameType, Buffer.from(JSON.stringify(obj), "utf-8"));
}

/** Decode one BATCH body into tile records; rejects trailing bytes. */
export function decodeBatch(body: Buffer): TileRecord[] {
  if (body.length < 4) {
    throw new ProtocolError("BATCH body shorter than its count field");
  }
  const count = body.readUInt32BE(0);
  let offset = 4;
  const records: TileRecord[] = [];
  for (let i = 0; i < count; i++) {
    if (offset + 4 > body.length) {
      throw new ProtocolError("truncated BATCH record header");
    }
    const metaLen = body.readUInt32BE(offset);
    offset += 4;
    if (offset + metaLen > body.length) {
      throw new ProtocolError("truncated BATCH metadata");
    }
    let meta: TileMeta;
    try {
      meta = JSON.parse(body.subarray(offset, offset + metaLen).toString("utf-8"));
    } catch (err) {
      throw new ProtocolError(`bad metadata JSON: ${String(err)}`);
    }
    offset += metaLen;
    const pixelLen = meta.width * meta.height * 3;
    if (offset + pixelLen > body.length) {
      throw new ProtocolError("truncated BATCH pixel data");
    }
    records.push({
      meta,
      pixels: new Uint8Array(body.subarray(offset, offset + pixelLen)),
    });
    offset += pixelLen;
  }
  if (offset !== body.length) {
    throw new ProtocolError("trailing bytes after BATCH records");
  }
  return records;
}

/**
 * Incremental frame parser: feed raw socket chunks, pull whole frames.
 */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): void {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
  }

  /** Returns the next complete frame, or null if more bytes are needed. */
  next(): { frameType: number; body: Buffer } | null {
    if (this.buffer.length < 4) {
      return null;
    }
    const length = this.buffer.readUInt32BE(0);
    if (length < 1 || length > MAX_FRAME) {
      throw new ProtocolError(`bad frame length ${length}`);
    }
    if (this.buffer.length < 4 + length) {
      return null;
    }
    const frameType = this.buffer.readUInt8(4);
    const body = this.buffer.subarray(5, 4 + length);
    this.buffer = this.buffer.subarray(4 + length);
    return { frameType, body };
  }

  get pendingBytes(): number {
    return this.buffer.length;
  }
}
