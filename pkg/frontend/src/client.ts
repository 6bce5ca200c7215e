import * as net from "node:net";

import {
  FRAME_BATCH,
  FRAME_ERROR,
  FRAME_HELLO,
  FRAME_NEXT,
  FrameDecoder,
  HandshakeError,
  PROTOCOL_VERSION,
  ProtocolError,
  SERVER_MAGIC,
  ServerHello,
  StreamClosed,
  TileRecord,
  decodeBatch,
  encodeFrame,
  encodeJsonFrame,
} from "./protocol.js";

export interface ConnectOptions {
  host: string;
  port: number;
  batchSize: number;
  seed?: number;
}

export interface TileBatch {
  records: TileRecord[];
}

interface PendingFrame {
  resolve: (frame: { frameType: number; body: Buffer }) => void;
  reject: (err: Error) => void;
}

/**
 * Pull-based client for the tile streaming protocol.
 *
 * The client performs no augmentation or filtering: all randomness
 * lives server-side, so a training run is reproducible from the stream
 * seed alone. One NEXT is outstanding at a time, which bounds both
 * client and server memory to a single batch.
 */
export class TileClientStream {
  private readonly decoder = new FrameDecoder();
  private pending: PendingFrame | null = null;
  private failure: Error | null = null;
  private nextExpectedIndex = 0;
  private inFlight = 0;
  /** Highest number of simultaneously outstanding NEXT requests seen. */
  maxObservedInFlight = 0;

  private constructor(
    private readonly socket: net.Socket,
    readonly hello: ServerHello,
  ) {
    this.attachHandlers();
  }

  static async connect(options: ConnectOptions): Promise<TileClientStream> {
    const socket = await new Promise<net.Socket>((resolve, reject) => {
      const s = net.createConnection(
        { host: options.host, port: options.port },
        () => {
          s.off("error", reject);
          resolve(s);
        },
      );
      s.once("error", reject);
    });
    socket.write(
      encodeJsonFrame(FRAME_HELLO, {
        batch_size: options.batchSize,
        seed: options.seed ?? 0,
      }),
    );
    const frame = await readSingleFrame(socket);
    if (frame.frameType === FRAME_ERROR) {
      socket.destroy();
      throw new HandshakeError(`server error: ${frame.body.toString("utf-8")}`);
    }
    if (frame.frameType !== FRAME_HELLO) {
      socket.destroy();
      throw new HandshakeError(
        `expected HELLO reply, got frame type 0x${frame.frameType.toString(16)}`,
      );
    }
    let hello: ServerHello;
    try {
      hello = JSON.parse(frame.body.toString("utf-8"));
    } catch (err) {
      socket.destroy();
      throw new HandshakeError(`bad HELLO body: ${String(err)}`);
    }
    if (hello.magic !== SERVER_MAGIC) {
      socket.destroy();
      throw new HandshakeError(`unexpected server magic ${JSON.stringify(hello.magic)}`);
    }
    if (hello.version !== PROTOCOL_VERSION) {
      socket.destroy();
      throw new HandshakeError(`unsupported protocol version ${hello.version}`);
    }
    return new TileClientStream(socket, hello);
  }

  private attachHandlers(): void {
    this.socket.on("data", (chunk: Buffer) => {
      try {
        this.decoder.feed(chunk);
        const frame = this.decoder.next();
        if (frame !== null && this.pending !== null) {
          const waiter = this.pending;
          this.pending = null;
          waiter.resolve(frame);
        }
      } catch (err) {
        this.fail(err instanceof Error ? err : new Error(String(err)));
      }
    });
    this.socket.on("error", (err: Error) => this.fail(err));
    this.socket.on("close", () =>
      this.fail(new StreamClosed("server closed the connection")),
    );
  }

  private fail(err: Error): void {
    if (this.failure === null) {
      this.failure = err;
    }
    if (this.pending !== null) {
      const waiter = this.pending;
      this.pending = null;
      waiter.reject(this.failure);
    }
  }

  private awaitFrame(): Promise<{ frameType: number; body: Buffer }> {
    const buffered = this.decoder.next();
    if (buffered !== null) {
      return Promise.resolve(buffered);
    }
    if (this.failure !== null) {
      return Promise.reject(this.failure);
    }
    if (this.pending !== null) {
      return Promise.reject(
        new ProtocolError("a frame request is already outstanding"),
      );
    }
    return new Promise((resolve, reject) => {
      this.pending = { resolve, reject };
    });
  }

  /** Request and decode one batch; validates tile index continuity. */
  async nextBatch(): Promise<TileBatch> {
    if (this.failure !== null) {
      throw this.failure;
    }
    this.inFlight += 1;
    this.maxObservedInFlight = Math.max(this.maxObservedInFlight, this.inFlight);
    this.socket.write(encodeFrame(FRAME_NEXT));
    let frame;
    try {
      frame = await this.awaitFrame();
    } finally {
      this.inFlight -= 1;
    }
    if (frame.frameType === FRAME_ERROR) {
      throw new ProtocolError(`server error: ${frame.body.toString("utf-8")}`);
    }
    if (frame.frameType !== FRAME_BATCH) {
      throw new ProtocolError(
        `expected BATCH, got frame type 0x${frame.frameType.toString(16)}`,
      );
    }
    const records = decodeBatch(frame.body);
    for (const record of records) {
      if (record.meta.tile_index !== this.nextExpectedIndex) {
        throw new ProtocolError(
          `tile index gap: expected ${this.nextExpectedIndex}, ` +
            `got ${record.meta.tile_index}`,
        );
      }
      this.nextExpectedIndex += 1;
    }
    return { records };
  }

  /** Async iterable over `nBatches` batches, one NEXT in flight at a time. */
  async *iterBatches(nBatches: number): AsyncGenerator<TileBatch> {
    for (let i = 0; i < nBatches; i++) {
      yield await this.nextBatch();
    }
  }

  close(): void {
    this.socket.destroy();
  }
}

async function readSingleFrame(
  socket: net.Socket,
): Promise<{ frameType: number; body: Buffer }> {
  const decoder = new FrameDecoder();
  return new Promise((resolve, reject) => {
    const onData = (chunk: Buffer) => {
      try {
        decoder.feed(chunk);
        const frame = decoder.next();
        if (frame !== null) {
          cleanup();
          resolve(frame);
        }
      } catch (err) {
        cleanup();
        reject(err);
      }
    };
    const onError = (err: Error) => {
      cleanup();
      reject(err);
    };
    const onClose = () => {
      cleanup();
      reject(new StreamClosed("connection closed during handshake"));
    };
    const cleanup = () => {
      socket.off("data", onData);
      socket.off("error", onError);
      socket.off("close", onClose);
    };
    socket.on("data", onData);
    socket.on("error", onError);
    socket.on("close", onClose);
  });
}

export function connect(options: ConnectOptions): Promise<TileClientStream> {
  return TileClientStream.connect(options);
}
