/** Error taxonomy mirroring the engine's exit-code contract:
 * usage mistakes exit 2, data problems exit 3. */

export class ExportError extends Error {
  readonly category: string;

  constructor(category: string, message: string) {
    super(message);
    this.category = category;
    this.name = new.target.name;
  }
}

export class UsageError extends ExportError {
  constructor(message: string) {
    super('usage', message);
  }
}

export class FormatError extends ExportError {
  constructor(message: string) {
    super('format', message);
  }
}

export class CorruptionError extends ExportError {
  constructor(message: string) {
    super('corruption', message);
  }
}

export class ValidationError extends ExportError {
  constructor(message: string) {
    super('validation', message);
  }
}

export class ConsistencyError extends ExportError {
  constructor(message: string) {
    super('consistency', message);
  }
}

export function exitCodeFor(err: unknown): number {
  if (err instanceof UsageError) return 2;
  if (err instanceof ExportError) return 3;
  return 3;
}
