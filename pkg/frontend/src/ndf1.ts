/**
 * NDF1 feature-file container.
 *
 * Layout (all integers little-endian):
 *   magic "NDF1" | version u16 = 1 | kind u8 (0 = packed binary, 1 = real32)
 *   | dim u32 | image count u64
 *   then per image: id length u16 | UTF-8 id | feature count u32 | payload
 *   then a trailing CRC32 of everything before it.
 *
 * Real payloads are `dim` IEEE-754 32-bit values per feature; binary
 * payloads are ceil(dim / 8) bytes per feature with bit 0 in the LSB
 * of byte 0. The retrieval core reads the same layout, so bytes written
 * here must load there unchanged.
 */

import { crc32 } from 'node:zlib';

export const NDF1_MAGIC = Buffer.from('NDF1', 'ascii');
export const NDF1_VERSION = 1;

export type FeatureKindCode = 'binary' | 'real';

export interface FeatureImage {
  id: string;
  /** Row-major features: count x dim reals, or count x ceil(dim/8) bytes. */
  features: Float32Array[] | Uint8Array[];
}

export class Ndf1Error extends Error {}

function rowBytes(kind: FeatureKindCode, dim: number): number {
  return kind === 'binary' ? Math.ceil(dim / 8) : dim * 4;
}

export function writeFeatures(
  images: FeatureImage[],
  kind: FeatureKindCode,
  dim: number,
): Buffer {
  const width = rowBytes(kind, dim);
  const parts: Buffer[] = [];
  const header = Buffer.alloc(4 + 2 + 1 + 4 + 8);
  NDF1_MAGIC.copy(header, 0);
  header.writeUInt16LE(NDF1_VERSION, 4);
  header.writeUInt8(kind === 'binary' ? 0 : 1, 6);
  header.writeUInt32LE(dim, 7);
  header.writeBigUInt64LE(BigInt(images.length), 11);
  parts.push(header);

  const seen = new Set<string>();
  for (const image of images) {
    if (seen.has(image.id)) {
      throw new Ndf1Error(`duplicate image id ${JSON.stringify(image.id)}`);
    }
    seen.add(image.id);
    const ident = Buffer.from(image.id, 'utf-8');
    if (ident.length > 0xffff) {
      throw new Ndf1Error(`image id too long: ${ident.length} bytes`);
    }
    const head = Buffer.alloc(2 + ident.length + 4);
    head.writeUInt16LE(ident.length, 0);
    ident.copy(head, 2);
    head.writeUInt32LE(image.features.length, 2 + ident.length);
    parts.push(head);
    for (const row of image.features) {
      let raw: Buffer;
      if (row instanceof Float32Array) {
        raw = Buffer.alloc(row.length * 4);
        for (let d = 0; d < row.length; d++) raw.writeFloatLE(row[d], d * 4);
      } else {
        raw = Buffer.from(row); // copies, so later mutation cannot corrupt output
      }
      if (raw.length !== width) {
        throw new Ndf1Error(
          `feature of ${image.id} is ${raw.length} bytes, expected ${width}`,
        );
      }
      parts.push(raw);
    }
  }
  const body = Buffer.concat(parts);
  const tail = Buffer.alloc(4);
  tail.writeUInt32LE(crc32(body) >>> 0, 0);
  return Buffer.concat([body, tail]);
}

export interface ReadResult {
  kind: FeatureKindCode;
  dim: number;
  images: { id: string; features: Float32Array[] | Uint8Array[] }[];
}

/** Parse an NDF1 buffer; used by tests to verify our own output. */
export function readFeatures(data: Buffer): ReadResult {
  if (data.length < 19 + 4) {
    throw new Ndf1Error(`file too short: ${data.length} bytes`);
  }
  const body = data.subarray(0, data.length - 4);
  const declared = data.readUInt32LE(data.length - 4);
  if ((crc32(body) >>> 0) !== declared) {
    throw new Ndf1Error('CRC mismatch');
  }
  if (!body.subarray(0, 4).equals(NDF1_MAGIC)) {
    throw new Ndf1Error('bad magic');
  }
  const version = body.readUInt16LE(4);
  if (version !== NDF1_VERSION) {
    throw new Ndf1Error(`unsupported version ${version}`);
  }
  const kindByte = body.readUInt8(6);
  if (kindByte !== 0 && kindByte !== 1) {
    throw new Ndf1Error(`unknown kind byte ${kindByte}`);
  }
  const kind: FeatureKindCode = kindByte === 0 ? 'binary' : 'real';
  const dim = body.readUInt32LE(7);
  const count = body.readBigUInt64LE(11);
  const width = rowBytes(kind, dim);
  let offset = 19;
  const images: ReadResult['images'] = [];
  for (let i = 0n; i < count; i++) {
    if (offset + 2 > body.length) throw new Ndf1Error('truncated image header');
    const idLen = body.readUInt16LE(offset);
    offset += 2;
    if (offset + idLen + 4 > body.length) {
      throw new Ndf1Error('truncated image record');
    }
    const id = body.subarray(offset, offset + idLen).toString('utf-8');
    offset += idLen;
    const nFeatures = body.readUInt32LE(offset);
    offset += 4;
    const payload = nFeatures * width;
    if (offset + payload > body.length) {
      throw new Ndf1Error(`payload of ${id} overruns the file`);
    }
    const features: (Float32Array | Uint8Array)[] = [];
    for (let j = 0; j < nFeatures; j++) {
      const slice = body.subarray(offset + j * width, offset + (j + 1) * width);
      if (kind === 'real') {
        const out = new Float32Array(dim);
        for (let d = 0; d < dim; d++) out[d] = slice.readFloatLE(d * 4);
        features.push(out);
      } else {
        features.push(Uint8Array.from(slice));
      }
    }
    offset += payload;
    images.push({ id, features: features as Float32Array[] | Uint8Array[] });
  }
  if (offset !== body.length) {
    throw new Ndf1Error(`${body.length - offset} trailing bytes after images`);
  }
  return { kind, dim, images };
}
