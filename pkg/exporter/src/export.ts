/**
 * Batch export: runs every image through the backbone, records the final-conv
 * spatial maps (optional), their spatial mean as the GAP feature vector g,
 * and the model's own top-1 as the inferred label; dumps the dense layer as
 * the classifier head; and writes a parity report comparing the toolkit-side
 * prediction from (g, W, b) against the framework's top-1.
 */

import * as tf from '@tensorflow/tfjs';
import { writeFileSync } from 'node:fs';

import { classify } from './classify.js';
import {
  ClassifierHeadData,
  FeatureBundleData,
  ImageRecordData,
  encodeClassifierHead,
  encodeFeatureBundle,
} from './formats.js';
import { GapDenseModel, inspectGapDenseModel } from './model.js';

export interface LabeledImage {
  /** input tensor of the model's expected spatial shape (h, w, channels) */
  pixels: tf.Tensor3D;
  classIndex: number;
  sourcePath: string;
}

export interface ExportJob {
  /** recorded in the parity report for reproducibility */
  modelIdentifier: string;
  model: tf.LayersModel;
  images: LabeledImage[];
  bundlePath: string;
  headPath: string;
  reportPath?: string;
  includeSpatial?: boolean;
  batchSize?: number;
  /** preprocessing recipe description, recorded in the parity report */
  preprocessing?: string;
}

export interface ParityReport {
  modelIdentifier: string;
  preprocessing: string;
  images: number;
  filters: number;
  classes: number;
  spatialMaps: boolean;
  topOneAgreement: number;
  maxProbDifference: number;
  maxSpatialMeanRelError: number;
  disagreements: number[];
}

export interface ExportResult {
  bundle: FeatureBundleData;
  head: ClassifierHeadData;
  report: ParityReport;
}

export function exportJob(job: ExportJob): ExportResult {
  const inspected = inspectGapDenseModel(job.model);
  const { n, numClasses } = inspected;
  if (job.images.length === 0) {
    throw new Error('export needs at least one labeled image');
  }
  const includeSpatial = job.includeSpatial ?? true;
  const batchSize = job.batchSize ?? 32;

  const records: ImageRecordData[] = [];
  let hs = 0;
  let ws = 0;
  let agreements = 0;
  let maxProbDiff = 0;
  let maxMeanRelErr = 0;
  const disagreements: number[] = [];
  const head: ClassifierHeadData = {
    n,
    numClasses,
    weights: inspected.weights,
    bias: inspected.bias,
  };

  for (let start = 0; start < job.images.length; start += batchSize) {
    const batch = job.images.slice(start, start + batchSize);
    const { spatial, probs } = runBatch(inspected, batch);
    const [, bh, bw] = [spatial.length, spatial[0].height, spatial[0].width];
    hs = bh;
    ws = bw;
    for (let i = 0; i < batch.length; i++) {
      const { maps, height, width } = spatial[i];
      const g = spatialMean(maps, height, width, n);
      const frameworkTop = argmax(probs[i]);
      const toolkit = classify(g.values, head);
      if (toolkit.topClass === frameworkTop) {
        agreements++;
      } else {
        disagreements.push(start + i);
      }
      for (let c = 0; c < numClasses; c++) {
        maxProbDiff = Math.max(maxProbDiff, Math.abs(toolkit.probs[c] - probs[i][c]));
      }
      maxMeanRelErr = Math.max(maxMeanRelErr, g.maxRelError);
      records.push({
        trueLabel: batch[i].classIndex,
        inferredLabel: frameworkTop,
        sourcePath: batch[i].sourcePath,
        g: g.values,
        spatial: includeSpatial ? maps : undefined,
      });
    }
  }

  const bundle: FeatureBundleData = {
    n,
    numClasses,
    spatialHeight: includeSpatial ? hs : 0,
    spatialWidth: includeSpatial ? ws : 0,
    images: records,
  };
  const report: ParityReport = {
    modelIdentifier: job.modelIdentifier,
    preprocessing: job.preprocessing ?? 'caller-supplied tensors, no preprocessing applied',
    images: records.length,
    filters: n,
    classes: numClasses,
    spatialMaps: includeSpatial,
    topOneAgreement: agreements / records.length,
    maxProbDifference: maxProbDiff,
    maxSpatialMeanRelError: maxMeanRelErr,
    disagreements,
  };

  writeFileSync(job.bundlePath, encodeFeatureBundle(bundle));
  writeFileSync(job.headPath, encodeClassifierHead(head));
  if (job.reportPath) {
    writeFileSync(job.reportPath, JSON.stringify(report, null, 2));
  }
  return { bundle, head, report };
}

interface SpatialSlice {
  maps: Float32Array; // h*w*n, row-major (row, col, filter)
  height: number;
  width: number;
}

function runBatch(
  inspected: GapDenseModel,
  batch: LabeledImage[],
): { spatial: SpatialSlice[]; probs: Float32Array[] } {
  const input = tf.stack(batch.map((im) => im.pixels));
  const [convOut, probOut] = inspected.probe.predict(input) as tf.Tensor[];
  const [, height, width, channels] = convOut.shape as number[];
  const convData = convOut.dataSync() as Float32Array;
  const probData = probOut.dataSync() as Float32Array;
  input.dispose();
  convOut.dispose();
  probOut.dispose();

  const sliceSize = height * width * channels;
  const spatial: SpatialSlice[] = [];
  const probs: Float32Array[] = [];
  for (let i = 0; i < batch.length; i++) {
    spatial.push({
      maps: convData.slice(i * sliceSize, (i + 1) * sliceSize),
      height,
      width,
    });
    probs.push(
      probData.slice(i * inspected.numClasses, (i + 1) * inspected.numClasses),
    );
  }
  return { spatial, probs };
}

/** Per-channel spatial mean in float64, with the worst relative deviation of
 * the float32 round-trip (the GAP definition check). */
function spatialMean(
  maps: Float32Array,
  height: number,
  width: number,
  channels: number,
): { values: Float32Array; maxRelError: number } {
  const sums = new Float64Array(channels);
  for (let p = 0; p < height * width; p++) {
    const base = p * channels;
    for (let c = 0; c < channels; c++) sums[c] += maps[base + c];
  }
  const values = new Float32Array(channels);
  let maxRelError = 0;
  const area = height * width;
  for (let c = 0; c < channels; c++) {
    const mean = sums[c] / area;
    values[c] = mean;
    const denom = Math.max(Math.abs(mean), 1e-12);
    maxRelError = Math.max(maxRelError, Math.abs(values[c] - mean) / denom);
  }
  return { values, maxRelError };
}

function argmax(values: ArrayLike<number>): number {
  let best = 0;
  for (let i = 1; i < values.length; i++) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}
