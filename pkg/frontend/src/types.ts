// Wire types for the labeling service endpoints.

export interface SessionMeta {
  session_id: string;
  classes: string[];
  num_patches: number;
}

export interface NextPatch {
  done: boolean;
  patch_id?: string;
  image_url?: string;
  labeled: number;
  total: number;
  classes?: string[];
}

export interface LabelSubmission {
  patch_id: string;
  annotator: string;
  presence: number[];
  elapsed_ms: number;
  overwrite?: boolean;
}

export interface AnnotatorStats {
  labels: number;
  total_elapsed_ms: number;
  mean_ms_per_patch: number;
}

export interface SessionStats {
  session_id: string;
  labels: number;
  annotators: string[];
  total_elapsed_ms: number;
  mean_ms_per_patch: number | null;
  per_annotator: Record<string, AnnotatorStats>;
}

export interface ConsensusReport {
  consensus: number;
  annotators: string[];
  pairs: number;
  cells: number;
  warning?: string;
}
