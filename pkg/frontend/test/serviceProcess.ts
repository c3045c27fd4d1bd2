/** Shared constants and helpers for driving the Python service under test. */

export const SERVICE_PORT = 8719;
export const SERVICE_URL = `http://127.0.0.1:${SERVICE_PORT}`;

export async function waitForHealthy(baseUrl: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError = "no response";
  while (Date.now() < deadline) {
    try {
      const response = await fetch(baseUrl + "/healthz");
      if (response.ok) {
        return;
      }
      lastError = `status ${response.status}`;
    } catch (err) {
      lastError = String(err);
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error(`service did not become healthy: ${lastError}`);
}
