/**
 * Message types and framing for the pianobench wire protocol (version 1).
 *
 * Messages are single-line JSON objects with a string `kind` field; every
 * request gets exactly one reply.  See docs/protocol.md in the repository
 * root for the normative grammar.
 */

export const PROTOCOL_VERSION = 1;

/** Error codes a server may return in an error reply. */
export type ErrorCode =
  | "bad_message"
  | "version_mismatch"
  | "unknown_song"
  | "no_episode"
  | "episode_done"
  | "bad_action";

export interface RewardBreakdown {
  key: number;
  finger: number;
  energy: number;
  total: number;
}

export interface StepInfo {
  frame: number;
  precision: number;
  recall: number;
  f1: number;
  frames_evaluated: number;
  frames_skipped: number;
  reward_sums: { key: number; finger: number; energy: number; total: number };
}

export interface HandshakeReply {
  kind: "handshake";
  version: number;
  action_dim: number;
  obs_dim: number;
  dt: number;
  lookahead: number;
  songs: string[];
}

export interface ResetReply {
  kind: "reset";
  observation: number[];
  done: boolean;
}

export interface StepReply {
  kind: "step";
  observation: number[];
  reward: RewardBreakdown;
  done: boolean;
  info: StepInfo;
}

export interface CloseReply {
  kind: "close";
}

export interface ErrorReply {
  kind: "error";
  code: ErrorCode;
  message: string;
}

export type Reply = HandshakeReply | ResetReply | StepReply | CloseReply | ErrorReply;

/** Environment spec established by the handshake. */
export interface EnvSpec {
  version: number;
  actionDim: number;
  obsDim: number;
  dt: number;
  lookahead: number;
  songs: string[];
}

/** Raised when the server rejects a request with an error reply. */
export class ProtocolError extends Error {
  readonly code: ErrorCode;

  constructor(code: ErrorCode, message: string) {
    super(message);
    this.name = "ProtocolError";
    this.code = code;
  }
}

/** Raised locally, before anything is sent, when a request is malformed. */
export class ClientValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ClientValidationError";
  }
}

/** Raised on transport problems: connection loss, unparsable reply, timeout. */
export class TransportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TransportError";
  }
}

export function encodeMessage(message: object): string {
  return JSON.stringify(message);
}

export function parseReply(line: string): Reply {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch (err) {
    throw new TransportError(`reply is not valid JSON: ${String(err)}`);
  }
  if (typeof parsed !== "object" || parsed === null || typeof (parsed as { kind?: unknown }).kind !== "string") {
    throw new TransportError("reply is not an object with a string 'kind'");
  }
  return parsed as Reply;
}

/** Validate an action the way the server would, before sending it. */
export function validateAction(action: readonly number[], actionDim: number): void {
  if (!Array.isArray(action)) {
    throw new ClientValidationError("action must be an array of numbers");
  }
  if (action.length !== actionDim) {
    throw new ClientValidationError(
      `action has ${action.length} dims, expected ${actionDim}`,
    );
  }
  for (const value of action) {
    if (typeof value !== "number" || !Number.isFinite(value)) {
      throw new ClientValidationError("action entries must be finite numbers");
    }
  }
}
