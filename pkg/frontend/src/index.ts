export { encodeTen1, decodeTen1, tensorFromArray } from "./ten1.js";
export type { Tensor4 } from "./ten1.js";
export {
  DistillKitClient,
  ServiceError,
  boundCwdLoss,
  boundMgdLoss,
  boundEvaluate,
} from "./client.js";
export type {
  ParamsBlob,
  CwdLossResult,
  MgdLossResult,
  DetectionRecord,
  GroundTruthRecord,
  ClassMetrics,
  EvalReport,
} from "./client.js";
