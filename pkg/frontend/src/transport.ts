// Transport abstraction: the monitor speaks the same JSON envelopes over a
// browser WebSocket (/ws endpoint, one envelope per text frame) or, for
// headless use and tests, over the raw TCP port with 4-byte little-endian
// length prefixes.

export interface Transport {
  send(text: string): void;
  onMessage(handler: (text: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

/** Wraps a standard WebSocket (browser or injected fake). */
export class WebSocketTransport implements Transport {
  private handlers: ((text: string) => void)[] = [];
  private closers: (() => void)[] = [];

  constructor(private ws: {
    send(data: string): void;
    close(): void;
    addEventListener(type: string, cb: (ev: any) => void): void;
  }) {
    ws.addEventListener("message", (ev) => {
      for (const h of this.handlers) h(String(ev.data));
    });
    ws.addEventListener("close", () => {
      for (const c of this.closers) c();
    });
  }

  send(text: string): void {
    this.ws.send(text);
  }

  onMessage(handler: (text: string) => void): void {
    this.handlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closers.push(handler);
  }

  close(): void {
    this.ws.close();
  }
}

/** Node-only: length-prefixed frames over a net.Socket. */
export class TcpTransport implements Transport {
  private handlers: ((text: string) => void)[] = [];
  private closers: (() => void)[] = [];
  private buffer = Buffer.alloc(0);

  constructor(private socket: import("node:net").Socket) {
    socket.on("data", (chunk: Buffer) => {
      this.buffer = Buffer.concat([this.buffer, chunk]);
      for (;;) {
        if (this.buffer.length < 4) return;
        const length = this.buffer.readUInt32LE(0);
        if (this.buffer.length < 4 + length) return;
        const body = this.buffer.subarray(4, 4 + length).toString("utf-8");
        this.buffer = this.buffer.subarray(4 + length);
        for (const h of this.handlers) h(body);
      }
    });
    socket.on("close", () => {
      for (const c of this.closers) c();
    });
    socket.on("error", () => {
      /* close follows */
    });
  }

  send(text: string): void {
    const body = Buffer.from(text, "utf-8");
    const header = Buffer.alloc(4);
    header.writeUInt32LE(body.length, 0);
    this.socket.write(Buffer.concat([header, body]));
  }

  onMessage(handler: (text: string) => void): void {
    this.handlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closers.push(handler);
  }

  close(): void {
    this.socket.destroy();
  }
}

export async function connectTcp(host: string, port: number): Promise<TcpTransport> {
  const net = await import("node:net");
  return new Promise((resolve, reject) => {
    const socket = net.createConnection({ host, port }, () => resolve(new TcpTransport(socket)));
    socket.once("error", reject);
  });
}
