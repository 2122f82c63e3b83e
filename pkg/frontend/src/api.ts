/** Typed client for the four inference-service endpoints.
 *
 * The client performs no computation on model quantities: every number in a
 * response is handed to callers exactly as the service serialized it.
 */

export interface SchemaColumn {
  name: string;
  kind: "numeric" | "categorical";
  min?: number;
  max?: number;
  categories?: string[];
}

export interface SchemaDoc {
  columns: SchemaColumn[];
  classes: string[];
  target: string;
  model_hash: string;
  density_threshold: number;
}

export type FeatureMap = Record<string, number | string>;

export interface CounterfactualEntry {
  target_index: number;
  target_class: string;
  features: FeatureMap;
  diffs: Record<string, number | boolean>;
  valid: boolean;
  predicted_class: string;
  log_density: number;
  plausible: boolean;
}

export interface FeatureImportance {
  bias: number;
  per_column: Record<string, number>;
}

export interface PredictResponse {
  predicted_index: number;
  predicted_class: string;
  classes: string[];
  probabilities: number[];
  feature_importance: FeatureImportance;
  input: FeatureMap;
  counterfactuals: CounterfactualEntry[];
}

export interface HealthzResponse {
  status: string;
  model_hash: string;
}

/** Service-reported failure: {code, message, field?} bodies and transport
 * errors both surface as this type so the view layer has one error path. */
export class ApiError extends Error {
  readonly code: number;
  readonly field?: string;

  constructor(code: number, message: string, field?: string) {
    super(message);
    this.name = "ApiError";
    this.code = code;
    this.field = field;
  }

  /** True for "service not reachable / not ready" situations. */
  get serviceDown(): boolean {
    return this.code === 0 || this.code === 502 || this.code === 503;
  }
}

export interface ApiClient {
  healthz(): Promise<HealthzResponse>;
  getSchema(): Promise<SchemaDoc>;
  predict(features: FeatureMap): Promise<PredictResponse>;
  counterfactual(features: FeatureMap, target: string): Promise<CounterfactualEntry>;
}

async function parseError(response: Response): Promise<ApiError> {
  let message = `${response.status} ${response.statusText}`;
  let field: string | undefined;
  try {
    const body = await response.json();
    if (body && typeof body.message === "string") message = body.message;
    if (body && typeof body.field === "string") field = body.field;
  } catch {
    /* non-JSON error body: keep the status line */
  }
  return new ApiError(response.status, message, field);
}

export class HttpApiClient implements ApiClient {
  constructor(private readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  healthz(): Promise<HealthzResponse> {
    return this.request<HealthzResponse>("/healthz");
  }

  getSchema(): Promise<SchemaDoc> {
    return this.request<SchemaDoc>("/schema");
  }

  predict(features: FeatureMap): Promise<PredictResponse> {
    return this.post<PredictResponse>("/predict", { features });
  }

  counterfactual(features: FeatureMap, target: string): Promise<CounterfactualEntry> {
    return this.post<CounterfactualEntry>("/counterfactual", { features, target });
  }
}
