/** Wire types of the annotation service, mirrored field for field.
 *
 * Everything the console renders originates from one of these payloads;
 * the UI adds no derived state beyond the current interaction phase.
 */

export interface Assignment {
  topic_id: string;
  doc_id: string;
  topic_title: string;
  topic_description: string;
  document_text: string;
  grade_levels: number[];
  lease_expires_at: number;
}

export interface NextItemResponse extends Assignment {
  session_id: string;
  assessor_id: string;
  judged: number;
  budget: number;
}

export interface SubmitResponse {
  session_id: string;
  status: string;
  judged: number;
  budget: number;
  remaining: number;
}

export interface GroupProgress {
  group: number;
  topics: number;
  budget: number;
  judged: number;
}

export interface SessionStatus {
  session_id: string;
  collection: string;
  strategy: string;
  status: string;
  judged: number;
  budget: number;
  max_grade: number;
  n: number;
  groups: GroupProgress[];
  assessor_groups: Record<string, number>;
}

export interface CalibrationData {
  session_id: string;
  kind: string;
  judged: number;
  curves: Record<string, [number, number][]>;
}

export interface FinalizeResponse {
  session_id: string;
  status: string;
  export: string;
  pairs: number;
  human: number;
  predicted: number;
}

/** What one assessor's screen is doing right now. */
export type Phase = "loading" | "grading" | "submitting" | "complete";

/** The full view model; every value except `phase` and `banner` is copied
 * verbatim from a service response. */
export interface SessionView {
  sessionId: string;
  assessorId: string;
  status: string;
  judged: number;
  budget: number;
  assignment: Assignment | null;
  curve: CalibrationData | null;
  banner: string | null;
  phase: Phase;
}
