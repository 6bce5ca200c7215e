import * as fs from "node:fs";
import * as path from "node:path";

import { ProtocolError, TileRecord } from "./protocol.js";

export const SHARD_MAGIC = "MDNTSHRD";

export interface ShardIndex {
  shards: { path: string; count: number }[];
  total: number;
  config: Record<string, unknown>;
}

/** Read one shard file (magic + concatenated tile records). */
export function readShard(shardPath: string): TileRecord[] {
  const raw = fs.readFileSync(shardPath);
  if (raw.subarray(0, 8).toString("latin1") !== SHARD_MAGIC) {
    throw new ProtocolError(`bad shard magic in ${shardPath}`);
  }
  const records: TileRecord[] = [];
  let offset = 8;
  while (offset < raw.length) {
    const metaLen = raw.readUInt32BE(offset);
    offset += 4;
    const meta = JSON.parse(raw.subarray(offset, offset + metaLen).toString("utf-8"));
    offset += metaLen;
    const pixelLen = meta.width * meta.height * 3;
    records.push({
      meta,
      pixels: new Uint8Array(raw.subarray(offset, offset + pixelLen)),
    });
    offset += pixelLen;
  }
  if (offset !== raw.length) {
    throw new ProtocolError(`trailing bytes in shard ${shardPath}`);
  }
  return records;
}

/** Read every record of an exported shard set, in tile-index order. */
export function readShardSet(indexPath: string): TileRecord[] {
  const index: ShardIndex = JSON.parse(fs.readFileSync(indexPath, "utf-8"));
  const dir = path.dirname(indexPath);
  const records: TileRecord[] = [];
  for (const shard of index.shards) {
    records.push(...readShard(path.join(dir, shard.path)));
  }
  return records;
}
