/**
 * Architecture inspection for the supported backbone shape: any stack of
 * spatial layers ending in final-conv -> GlobalAveragePooling2D -> Dense
 * softmax. Anything else is rejected with an explicit error.
 */

import * as tf from '@tensorflow/tfjs';

export class UnsupportedArchitectureError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'UnsupportedArchitectureError';
  }
}

export interface GapDenseModel {
  model: tf.LayersModel;
  /** sub-model emitting [final-conv spatial maps, class probabilities] */
  probe: tf.LayersModel;
  /** final-convolution channel count */
  n: number;
  numClasses: number;
  /** dense kernel, [n, C] row-major */
  weights: Float32Array;
  bias: Float32Array;
}

export function inspectGapDenseModel(model: tf.LayersModel): GapDenseModel {
  const layers = model.layers;
  if (layers.length < 3) {
    throw new UnsupportedArchitectureError(
      'model too small: need conv stack + GlobalAveragePooling2D + Dense');
  }
  const dense = layers[layers.length - 1];
  const gap = layers[layers.length - 2];
  const conv = layers[layers.length - 3];
  if (gap.getClassName() !== 'GlobalAveragePooling2D') {
    throw new UnsupportedArchitectureError(
      `expected GlobalAveragePooling2D before the classifier, got ${gap.getClassName()}`);
  }
  if (dense.getClassName() !== 'Dense') {
    throw new UnsupportedArchitectureError(
      `expected a Dense softmax classifier on top, got ${dense.getClassName()}`);
  }
  const convShape = conv.outputShape as number[];
  if (convShape.length !== 4) {
    throw new UnsupportedArchitectureError(
      `expected a 4-D (batch, h, w, filters) tensor feeding GAP, got shape [${convShape}]`);
  }
  const n = convShape[3];
  const [kernel, biasVar] = dense.getWeights();
  const kernelShape = kernel.shape;
  if (kernelShape[0] !== n) {
    throw new UnsupportedArchitectureError(
      `dense input dim ${kernelShape[0]} does not match conv channel count ${n}`);
  }
  const numClasses = kernelShape[1] ?? 0;
  if (numClasses < 1) {
    throw new UnsupportedArchitectureError('dense classifier has no output units');
  }
  const probe = tf.model({
    inputs: model.inputs,
    outputs: [conv.output as tf.SymbolicTensor, model.outputs[0]],
  });
  return {
    model,
    probe,
    n,
    numClasses,
    weights: kernel.dataSync() as Float32Array,
    bias: biasVar.dataSync() as Float32Array,
  };
}
