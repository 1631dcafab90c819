/**
 * Float64 re-implementation of the toolkit-side prediction from exported
 * (g, W, b): logits are affine in the GAP features, probabilities come from a
 * max-subtracted softmax. Used to produce the parity report without invoking
 * the Python side.
 */

import type { ClassifierHeadData } from './formats.js';

export interface Prediction {
  probs: Float64Array;
  topClass: number;
  logits: Float64Array;
}

export function classify(g: ArrayLike<number>, head: ClassifierHeadData): Prediction {
  const { n, numClasses: C, weights, bias } = head;
  if (g.length !== n) {
    throw new Error(`feature vector length ${g.length} != head n ${n}`);
  }
  const logits = new Float64Array(C);
  for (let c = 0; c < C; c++) logits[c] = bias[c];
  for (let k = 0; k < n; k++) {
    const gk = g[k];
    for (let c = 0; c < C; c++) logits[c] += gk * weights[k * C + c];
  }
  let max = -Infinity;
  for (const z of logits) max = Math.max(max, z);
  const probs = new Float64Array(C);
  let sum = 0;
  for (let c = 0; c < C; c++) {
    probs[c] = Math.exp(logits[c] - max);
    sum += probs[c];
  }
  let topClass = 0;
  for (let c = 0; c < C; c++) {
    probs[c] /= sum;
    if (probs[c] > probs[topClass]) topClass = c;
  }
  return { probs, topClass, logits };
}
