// Thin typed client for the inference service. All displayed
// predictions originate from these calls; the UI never computes any.

import type {
  ModelMetadata,
  PredictRequestBody,
  PredictResponse,
  UploadResponse,
} from "./types.js";

export class ServiceError extends Error {
  constructor(readonly status: number, readonly reason: string) {
    super(`service error ${status}: ${reason}`);
  }
}

async function parseError(response: Response): Promise<ServiceError> {
  let reason = response.statusText;
  try {
    const body = await response.json();
    if (body && body.detail && body.detail.reason) reason = body.detail.reason;
  } catch {
    // keep the status text
  }
  return new ServiceError(response.status, reason);
}

export class ServiceClient {
  constructor(readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  getModel(): Promise<ModelMetadata> {
    return this.request<ModelMetadata>("/v1/model");
  }

  uploadAssembly(assembly: unknown): Promise<UploadResponse> {
    return this.request<UploadResponse>("/v1/graphs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ assembly }),
    });
  }

  predict(body: PredictRequestBody, signal?: AbortSignal): Promise<PredictResponse> {
    return this.request<PredictResponse>("/v1/predict", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
  }
}
