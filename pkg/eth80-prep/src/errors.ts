/** Errors raised while reading an ETH-80 archive or writing containers.
 *
 * Everything the converter can diagnose about its input derives from one
 * of these; the CLI maps them to exit code 3 (bad data) as opposed to
 * exit code 2 (bad invocation).
 */

export class Eth80PrepError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** The directory tree does not look like an extracted ETH-80 archive. */
export class ArchiveLayoutError extends Eth80PrepError {}

/** An object directory does not hold exactly the expected 41 frames. */
export class MissingFramesError extends Eth80PrepError {}

/** A frame file is not a decodable PNG image. */
export class ImageDecodeError extends Eth80PrepError {}

/** A frame decoded fine but is not 128x128 pixels. */
export class ImageSizeError extends Eth80PrepError {}

/** A container file is malformed (used by the reader in round-trip checks). */
export class ContainerFormatError extends Eth80PrepError {}
