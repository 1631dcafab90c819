/**
 * Labeled-image loading for export jobs.
 *
 * The labels file is two-column UTF-8 text: `relative/path class-index` per
 * line (whitespace separated; blank lines and #-comments ignored). Image
 * files are raw little-endian float32 tensors of the model's input shape
 * (h * w * channels values, row-major channels-last) — decoding and resizing
 * from encoded image formats is expected to happen upstream, where the
 * source framework's preprocessing recipe lives.
 */

import * as tf from '@tensorflow/tfjs';
import { readFileSync } from 'node:fs';
import { join } from 'node:path';

import type { LabeledImage } from './export.js';

export interface LabelEntry {
  path: string;
  classIndex: number;
}

export function parseLabelsFile(text: string): LabelEntry[] {
  const entries: LabelEntry[] = [];
  for (const [lineNo, raw] of text.split('\n').entries()) {
    const line = raw.trim();
    if (line === '' || line.startsWith('#')) continue;
    const parts = line.split(/\s+/);
    if (parts.length !== 2) {
      throw new Error(`labels line ${lineNo + 1}: expected "path class-index", got "${line}"`);
    }
    const classIndex = Number(parts[1]);
    if (!Number.isInteger(classIndex) || classIndex < 0) {
      throw new Error(`labels line ${lineNo + 1}: bad class index "${parts[1]}"`);
    }
    entries.push({ path: parts[0], classIndex });
  }
  return entries;
}

export function loadRawImage(
  filePath: string,
  shape: [number, number, number],
): tf.Tensor3D {
  const bytes = readFileSync(filePath);
  const expected = shape[0] * shape[1] * shape[2] * 4;
  if (bytes.length !== expected) {
    throw new Error(
      `${filePath}: ${bytes.length} bytes, expected ${expected} for shape [${shape}]`);
  }
  const values = new Float32Array(shape[0] * shape[1] * shape[2]);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  for (let i = 0; i < values.length; i++) values[i] = view.getFloat32(i * 4, true);
  return tf.tensor3d(values, shape);
}

export function loadLabeledImages(
  imageDir: string,
  labelsFile: string,
  shape: [number, number, number],
): LabeledImage[] {
  const entries = parseLabelsFile(readFileSync(labelsFile, 'utf-8'));
  return entries.map((entry) => ({
    pixels: loadRawImage(join(imageDir, entry.path), shape),
    classIndex: entry.classIndex,
    sourcePath: entry.path,
  }));
}
