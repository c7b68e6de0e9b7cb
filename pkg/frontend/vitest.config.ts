import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // fixture setup trains two small models through the core CLI
    hookTimeout: 300_000,
    testTimeout: 120_000,
  },
});
