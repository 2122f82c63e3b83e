/** Session state machine for the what-if explorer.
 *
 * All state changes flow through a single reducer over `Transition` records,
 * and every transition is appended to `transitions` — so a session's final
 * state is reproducible by replaying that log (see `ViewModel.replay`).
 * Numbers held here are verbatim service output; nothing is recomputed.
 */

import {
  ApiClient,
  ApiError,
  CounterfactualEntry,
  FeatureMap,
  PredictResponse,
  SchemaDoc,
} from "./api.js";

export interface HistoryEntry {
  before: FeatureMap;
  after: FeatureMap;
  target: string;
  achieved: string | null;
}

export type Transition =
  | { kind: "schema-loaded"; schema: SchemaDoc }
  | { kind: "schema-failed"; message: string }
  | { kind: "field-edited"; name: string; value: number | string }
  | { kind: "field-invalid"; name: string; message: string }
  | { kind: "submitted"; seq: number; features: FeatureMap }
  | { kind: "response-accepted"; seq: number; response: PredictResponse }
  | { kind: "response-discarded"; seq: number }
  | {
      kind: "request-failed";
      seq: number;
      code: number;
      message: string;
      field?: string;
      serviceDown: boolean;
    }
  | { kind: "target-selected"; target: string | null }
  | { kind: "apply-started"; target: string; before: FeatureMap; after: FeatureMap }
  | { kind: "apply-recorded"; entry: HistoryEntry }
  | { kind: "apply-reverted"; before: FeatureMap };

/** Schema-valid starting form: numeric fields sit at the train-range minimum
 * (a value the schema itself supplies), categoricals at the first category. */
export function defaultForm(schema: SchemaDoc): FeatureMap {
  const form: FeatureMap = {};
  for (const col of schema.columns) {
    if (col.kind === "numeric") {
      form[col.name] = col.min ?? 0;
    } else {
      form[col.name] = col.categories?.[0] ?? "";
    }
  }
  return form;
}

export class ViewModel {
  schema: SchemaDoc | null = null;
  form: FeatureMap = {};
  lastResponse: PredictResponse | null = null;
  selectedTarget: string | null = null;
  readonly history: HistoryEntry[] = [];
  readonly transitions: Transition[] = [];
  banner: string | null = null;
  fieldErrors: Record<string, string> = {};

  private issued = 0;
  private pendingSeq: number | null = null;
  private listeners: Array<() => void> = [];

  constructor(private readonly client: ApiClient) {}

  get busy(): boolean {
    return this.pendingSeq !== null;
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(t: Transition): void {
    this.applyTransition(t);
    this.transitions.push(t);
    for (const l of this.listeners) l();
  }

  /** The one reducer: both live updates and replay go through here. */
  private applyTransition(t: Transition): void {
    switch (t.kind) {
      case "schema-loaded":
        this.schema = t.schema;
        this.form = defaultForm(t.schema);
        this.banner = null;
        this.fieldErrors = {};
        break;
      case "schema-failed":
        this.banner = t.message;
        break;
      case "field-edited":
        this.form = { ...this.form, [t.name]: t.value };
        delete this.fieldErrors[t.name];
        break;
      case "field-invalid":
        this.fieldErrors = { ...this.fieldErrors, [t.name]: t.message };
        break;
      case "submitted":
        this.fieldErrors = {};
        this.pendingSeq = t.seq;
        break;
      case "response-accepted":
        this.lastResponse = t.response;
        if (this.pendingSeq === t.seq) this.pendingSeq = null;
        break;
      case "response-discarded":
        break;
      case "request-failed":
        if (t.field !== undefined) {
          this.fieldErrors = { ...this.fieldErrors, [t.field]: t.message };
        } else if (t.serviceDown) {
          this.banner = t.message;
        } else {
          this.banner = t.message;
        }
        if (this.pendingSeq === t.seq) this.pendingSeq = null;
        break;
      case "target-selected":
        this.selectedTarget = t.target;
        break;
      case "apply-started":
        this.form = { ...t.after };
        this.selectedTarget = t.target;
        break;
      case "apply-recorded":
        this.history.push(t.entry);
        break;
      case "apply-reverted":
        this.form = { ...t.before };
        break;
    }
  }

  async loadSchema(): Promise<void> {
    try {
      const schema = await this.client.getSchema();
      this.emit({ kind: "schema-loaded", schema });
    } catch (err) {
      const message =
        err instanceof ApiError ? err.message : `schema fetch failed: ${String(err)}`;
      this.emit({ kind: "schema-failed", message });
    }
  }

  /** Record a form edit. Numeric fields accept either numbers or the raw
   * input string; an unparseable string becomes an inline field error and
   * the form keeps its previous (schema-valid) value. */
  setField(name: string, value: number | string): void {
    const col = this.schema?.columns.find((c) => c.name === name);
    if (!col) return;
    if (col.kind === "numeric") {
      const parsed = typeof value === "number" ? value : Number(value);
      if (!Number.isFinite(parsed)) {
        this.emit({ kind: "field-invalid", name, message: "must be a finite number" });
        return;
      }
      this.emit({ kind: "field-edited", name, value: parsed });
    } else {
      this.emit({ kind: "field-edited", name, value: String(value) });
    }
  }

  selectTarget(target: string | null): void {
    this.emit({ kind: "target-selected", target });
  }

  /** Submit the current form. Returns the accepted response, or null when
   * the request failed or was superseded by a newer submission. */
  async submit(): Promise<PredictResponse | null> {
    if (!this.schema || Object.keys(this.fieldErrors).length > 0) return null;
    const seq = ++this.issued;
    const features = { ...this.form };
    this.emit({ kind: "submitted", seq, features });
    try {
      const response = await this.client.predict(features);
      if (seq !== this.issued) {
        this.emit({ kind: "response-discarded", seq });
        return null;
      }
      this.emit({ kind: "response-accepted", seq, response });
      return response;
    } catch (err) {
      if (seq !== this.issued) {
        this.emit({ kind: "response-discarded", seq });
        return null;
      }
      const apiErr =
        err instanceof ApiError ? err : new ApiError(0, String(err));
      this.emit({
        kind: "request-failed",
        seq,
        code: apiErr.code,
        message: apiErr.message,
        field: apiErr.field,
        serviceDown: apiErr.serviceDown,
      });
      return null;
    }
  }

  /** Replace the form with a card's raw values and re-query. On success the
   * what-if lands in history; on failure the pre-apply form is restored. */
  async applyCounterfactual(card: CounterfactualEntry): Promise<boolean> {
    const before = { ...this.form };
    const after = { ...card.features };
    this.emit({
      kind: "apply-started",
      target: card.target_class,
      before,
      after,
    });
    const response = await this.submit();
    if (response === null) {
      this.emit({ kind: "apply-reverted", before });
      return false;
    }
    this.emit({
      kind: "apply-recorded",
      entry: {
        before,
        after,
        target: card.target_class,
        achieved: response.predicted_class,
      },
    });
    return true;
  }

  /** Rebuild a session's state purely from a recorded transition log. */
  static replay(transitions: readonly Transition[]): ViewModel {
    const vm = new ViewModel(UNREACHABLE_CLIENT);
    for (const t of transitions) {
      vm.applyTransition(t);
      vm.transitions.push(t);
    }
    return vm;
  }
}

const UNREACHABLE_CLIENT: ApiClient = {
  healthz: () => Promise.reject(new ApiError(0, "replay-only view model")),
  getSchema: () => Promise.reject(new ApiError(0, "replay-only view model")),
  predict: () => Promise.reject(new ApiError(0, "replay-only view model")),
  counterfactual: () =>
    Promise.reject(new ApiError(0, "replay-only view model")),
};
