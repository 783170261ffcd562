/**
 * Socket client for the pianobench environment protocol.
 *
 * One client owns one session (one environment on the server).  Requests are
 * serialized: each call waits for the single reply to the previous request,
 * mirroring the server's strict in-order processing.  The client never
 * simulates anything locally - the wire is the only source of truth.
 */

import net from "node:net";

import {
  ClientValidationError,
  EnvSpec,
  ErrorReply,
  HandshakeReply,
  PROTOCOL_VERSION,
  ProtocolError,
  Reply,
  ResetReply,
  RewardBreakdown,
  StepInfo,
  StepReply,
  TransportError,
  encodeMessage,
  parseReply,
  validateAction,
} from "./protocol.js";

export interface ConnectOptions {
  host?: string;
  port: number;
  version?: number;
  /** Per-request timeout in milliseconds (default 30000). */
  timeoutMs?: number;
}

export interface ResetResult {
  observation: number[];
  done: boolean;
}

export interface StepResult {
  observation: number[];
  reward: RewardBreakdown;
  done: boolean;
  info: StepInfo;
}

interface Pending {
  resolve: (reply: Reply) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout;
}

/**
 * Connect to a server and perform the handshake.
 *
 * Rejects with a ProtocolError of code `version_mismatch` when the server
 * speaks a different protocol version, and with a TransportError when the
 * endpoint is unreachable.
 */
export async function connect(options: ConnectOptions): Promise<PianoClient> {
  const host = options.host ?? "127.0.0.1";
  const timeoutMs = options.timeoutMs ?? 30000;
  const socket = await new Promise<net.Socket>((resolve, reject) => {
    const sock = net.createConnection({ host, port: options.port });
    const onError = (err: Error) =>
      reject(new TransportError(`cannot connect to ${host}:${options.port}: ${err.message}`));
    sock.once("error", onError);
    sock.once("connect", () => {
      sock.off("error", onError);
      resolve(sock);
    });
  });
  const client = new PianoClient(socket, timeoutMs);
  const spec = await client.handshake(options.version ?? PROTOCOL_VERSION);
  client.specification = spec;
  return client;
}

export class PianoClient {
  /** Populated by connect(); dims, dt, lookahead, and served songs. */
  specification: EnvSpec | null = null;

  private readonly socket: net.Socket;
  private readonly timeoutMs: number;
  private buffer = "";
  private readonly pending: Pending[] = [];
  private closed = false;
  private lastDone = false;

  constructor(socket: net.Socket, timeoutMs: number) {
    this.socket = socket;
    this.timeoutMs = timeoutMs;
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => this.onData(chunk));
    socket.on("error", (err) => this.failAll(new TransportError(err.message)));
    socket.on("close", () => {
      if (!this.closed) {
        this.failAll(new TransportError("connection closed by the server"));
      }
    });
  }

  get spec(): EnvSpec {
    if (this.specification === null) {
      throw new TransportError("handshake has not completed");
    }
    return this.specification;
  }

  /** True after the last reset/step reply reported the episode finished. */
  get episodeDone(): boolean {
    return this.lastDone;
  }

  async handshake(version: number = PROTOCOL_VERSION): Promise<EnvSpec> {
    const reply = (await this.request({ kind: "handshake", version })) as HandshakeReply;
    return {
      version: reply.version,
      actionDim: reply.action_dim,
      obsDim: reply.obs_dim,
      dt: reply.dt,
      lookahead: reply.lookahead,
      songs: reply.songs,
    };
  }

  /** Start an episode of `song`; the optional seed is reproducibility metadata. */
  async reset(song: string, seed?: number): Promise<ResetResult> {
    const message: Record<string, unknown> = { kind: "reset", song };
    if (seed !== undefined) {
      message.seed = seed;
    }
    const reply = (await this.request(message)) as ResetReply;
    this.lastDone = reply.done;
    return { observation: reply.observation, done: reply.done };
  }

  /**
   * Apply one action for a control step.
   *
   * The action is validated locally against the handshake dims before
   * anything is sent; a bad vector throws ClientValidationError.
   */
  async step(action: readonly number[]): Promise<StepResult> {
    validateAction(action, this.spec.actionDim);
    const reply = (await this.request({ kind: "step", action })) as StepReply;
    this.lastDone = reply.done;
    return {
      observation: reply.observation,
      reward: reply.reward,
      done: reply.done,
      info: reply.info,
    };
  }

  /** Politely end the session and close the socket. */
  async close(): Promise<void> {
    if (this.closed) {
      return;
    }
    try {
      await this.request({ kind: "close" });
    } finally {
      this.closed = true;
      this.socket.destroy();
    }
  }

  /** Drop the connection without the closing exchange. */
  destroy(): void {
    this.closed = true;
    this.socket.destroy();
  }

  private request(message: object): Promise<Reply> {
    if (this.closed) {
      return Promise.reject(new TransportError("client is closed"));
    }
    return new Promise<Reply>((resolve, reject) => {
      const timer = setTimeout(() => {
        const index = this.pending.findIndex((p) => p.timer === timer);
        if (index >= 0) {
          this.pending.splice(index, 1);
        }
        reject(new TransportError(`no reply within ${this.timeoutMs} ms`));
      }, this.timeoutMs);
      this.pending.push({ resolve, reject, timer });
      this.socket.write(encodeMessage(message) + "\n");
    });
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    let index: number;
    while ((index = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, index).trim();
      this.buffer = this.buffer.slice(index + 1);
      if (!line) {
        continue;
      }
      const waiter = this.pending.shift();
      if (waiter === undefined) {
        continue; // unsolicited line; protocol forbids it, ignore defensively
      }
      clearTimeout(waiter.timer);
      let reply: Reply;
      try {
        reply = parseReply(line);
      } catch (err) {
        waiter.reject(err as Error);
        continue;
      }
      if (reply.kind === "error") {
        const error = reply as ErrorReply;
        waiter.reject(new ProtocolError(error.code, error.message));
      } else {
        waiter.resolve(reply);
      }
    }
  }

  private failAll(err: Error): void {
    while (this.pending.length) {
      const waiter = this.pending.shift()!;
      clearTimeout(waiter.timer);
      waiter.reject(err);
    }
  }
}
