export {
  FORMAT_VERSION,
  FormatError,
  encodeClassifierHead,
  encodeFeatureBundle,
  decodeClassifierHead,
  decodeFeatureBundle,
} from './formats.js';
export type {
  ClassifierHeadData,
  FeatureBundleData,
  ImageRecordData,
} from './formats.js';
export { classify } from './classify.js';
export type { Prediction } from './classify.js';
export { UnsupportedArchitectureError, inspectGapDenseModel } from './model.js';
export type { GapDenseModel } from './model.js';
export { exportJob } from './export.js';
export type { ExportJob, ExportResult, LabeledImage, ParityReport } from './export.js';
export { loadLabeledImages, loadRawImage, parseLabelsFile } from './dataset.js';
export type { LabelEntry } from './dataset.js';
