/**
 * HTTP client for the distillkit service.
 *
 * Tensors cross the wire as base64-encoded TEN1 blobs; MGD parameters and
 * gradients travel as (manifest text, concatenated-TEN1 blob) pairs.
 * Service-side domain errors (HTTP 400) are rethrown with the service's
 * own message so callers see exactly the primary implementation's text.
 */

import { decodeTen1, encodeTen1, Tensor4 } from "./ten1.js";

export interface ParamsBlob {
  manifest: string;
  blob: Uint8Array;
}

export interface CwdLossResult {
  loss: number;
  perChannel: number[];
  grad?: Tensor4;
  gradBytes?: Uint8Array;
}

export interface MgdLossResult {
  loss: number;
  grads?: ParamsBlob;
}

export interface DetectionRecord {
  image_id: string;
  class_id: number;
  bbox: [number, number, number, number];
  score: number;
}

export interface GroundTruthRecord {
  image_id: string;
  class_id: number;
  bbox: [number, number, number, number];
}

export interface ClassMetrics {
  precision: number;
  recall: number;
  ap50: number;
  ap50_95: number;
  counts: Record<string, { tp: number; fp: number; fn: number }>;
}

export interface EvalReport {
  map50: number;
  map50_95: number;
  included_class_ids: number[];
  per_class: Record<string, ClassMetrics>;
}

export class ServiceError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ServiceError";
  }
}

function toBase64(bytes: Uint8Array): string {
  return Buffer.from(bytes).toString("base64");
}

function fromBase64(payload: string): Uint8Array {
  return new Uint8Array(Buffer.from(payload, "base64"));
}

export class DistillKitClient {
  constructor(private readonly baseUrl: string) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = await response.text();
      try {
        const parsed = JSON.parse(detail);
        if (typeof parsed.detail === "string") {
          detail = parsed.detail;
        }
      } catch {
        // plain-text error body
      }
      throw new ServiceError(detail, response.status);
    }
    return (await response.json()) as T;
  }

  async health(): Promise<{ status: string; version: string }> {
    const response = await fetch(this.baseUrl + "/healthz");
    if (!response.ok) {
      throw new ServiceError(await response.text(), response.status);
    }
    return (await response.json()) as { status: string; version: string };
  }

  async cwdLoss(
    teacher: Tensor4,
    student: Tensor4,
    options: { temperature?: number; featureWeight?: number; includeGrad?: boolean } = {},
  ): Promise<CwdLossResult> {
    const body = {
      teacher: toBase64(encodeTen1(teacher)),
      student: toBase64(encodeTen1(student)),
      temperature: options.temperature ?? 2.0,
      feature_weight: options.featureWeight ?? 50.0,
      include_grad: options.includeGrad ?? false,
    };
    const raw = await this.post<{ loss: number; per_channel: number[]; grad?: string }>("/cwd/loss", body);
    const result: CwdLossResult = { loss: raw.loss, perChannel: raw.per_channel };
    if (raw.grad !== undefined) {
      result.gradBytes = fromBase64(raw.grad);
      result.grad = decodeTen1(result.gradBytes);
    }
    return result;
  }

  async mgdInit(options: {
    seed?: number;
    teacherChannels: number;
    studentChannels: number;
    maskRatio?: number;
    lossWeight?: number;
  }): Promise<ParamsBlob> {
    const raw = await this.post<{ manifest: string; blob: string }>("/mgd/init", {
      seed: options.seed ?? 0,
      teacher_channels: options.teacherChannels,
      student_channels: options.studentChannels,
      mask_ratio: options.maskRatio ?? 0.5,
      loss_weight: options.lossWeight ?? 2e-5,
    });
    return { manifest: raw.manifest, blob: fromBase64(raw.blob) };
  }

  async mgdLoss(
    teacher: Tensor4,
    student: Tensor4,
    options: {
      maskSeed: number;
      maskRatio?: number;
      lossWeight?: number;
      params: ParamsBlob;
      includeGrads?: boolean;
    },
  ): Promise<MgdLossResult> {
    const body = {
      teacher: toBase64(encodeTen1(teacher)),
      student: toBase64(encodeTen1(student)),
      mask_seed: options.maskSeed,
      mask_ratio: options.maskRatio ?? 0.5,
      loss_weight: options.lossWeight ?? 2e-5,
      params_manifest: options.params.manifest,
      params_blob: toBase64(options.params.blob),
      include_grads: options.includeGrads ?? false,
    };
    const raw = await this.post<{ loss: number; grads_manifest?: string; grads_blob?: string }>(
      "/mgd/loss",
      body,
    );
    const result: MgdLossResult = { loss: raw.loss };
    if (raw.grads_manifest !== undefined && raw.grads_blob !== undefined) {
      result.grads = { manifest: raw.grads_manifest, blob: fromBase64(raw.grads_blob) };
    }
    return result;
  }

  async evaluate(
    detections: DetectionRecord[],
    groundTruth: GroundTruthRecord[],
    options: { excludedClassIds?: number[]; iouSet?: "ap50" | "ap5095"; scoreThreshold?: number } = {},
  ): Promise<EvalReport> {
    return this.post<EvalReport>("/eval", {
      detections,
      ground_truth: groundTruth,
      excluded_class_ids: options.excludedClassIds ?? [],
      iou_set: options.iouSet ?? "ap5095",
      score_threshold: options.scoreThreshold ?? 0.0,
    });
  }
}

/** Channel-wise distillation loss plus the student gradient, as one call. */
export async function boundCwdLoss(
  client: DistillKitClient,
  teacher: Tensor4,
  student: Tensor4,
  temperature: number,
  featureWeight: number,
): Promise<{ loss: number; grad: Tensor4 }> {
  const result = await client.cwdLoss(teacher, student, {
    temperature,
    featureWeight,
    includeGrad: true,
  });
  if (!result.grad) {
    throw new Error("service response missing gradient payload");
  }
  return { loss: result.loss, grad: result.grad };
}

/** Masked reconstruction loss and its gradient blob, mask seeded explicitly. */
export async function boundMgdLoss(
  client: DistillKitClient,
  teacher: Tensor4,
  student: Tensor4,
  maskSeed: number,
  maskRatio: number,
  lossWeight: number,
  params: ParamsBlob,
): Promise<{ loss: number; grads: ParamsBlob }> {
  const result = await client.mgdLoss(teacher, student, {
    maskSeed,
    maskRatio,
    lossWeight,
    params,
    includeGrads: true,
  });
  if (!result.grads) {
    throw new Error("service response missing gradients payload");
  }
  return { loss: result.loss, grads: result.grads };
}

/** Detection metrics with the given classes removed from both sides. */
export async function boundEvaluate(
  client: DistillKitClient,
  detections: DetectionRecord[],
  groundTruth: GroundTruthRecord[],
  excludedClassIds: number[],
  iouSet: "ap50" | "ap5095" = "ap5095",
): Promise<EvalReport> {
  return client.evaluate(detections, groundTruth, { excludedClassIds, iouSet });
}
