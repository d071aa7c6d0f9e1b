// Plugin panel: lists the tools the service registered for an agent session
// and toggles which ones episodes may use. Unknown toggles are rejected by
// the service and surfaced inline.

import type { ApiClient } from "./api.js";
import type { ToolView } from "./types.js";

export function renderPluginPanel(
  container: HTMLElement,
  tools: ToolView[],
  onToggle: (toolId: string, enabled: boolean) => void,
): void {
  container.textContent = "";
  if (tools.length === 0) {
    const empty = document.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "no tools registered";
    container.appendChild(empty);
    return;
  }
  const list = document.createElement("ul");
  list.className = "tool-list";
  for (const tool of tools) {
    const item = document.createElement("li");
    item.className = "tool-item";
    const checkbox = document.createElement("input");
    checkbox.type = "checkbox";
    checkbox.checked = tool.enabled;
    checkbox.dataset.toolId = tool.tool_id;
    checkbox.addEventListener("change", () => onToggle(tool.tool_id, checkbox.checked));
    const label = document.createElement("label");
    label.textContent = `${tool.tool_id}: ${tool.description}`;
    item.appendChild(checkbox);
    item.appendChild(label);
    list.appendChild(item);
  }
  container.appendChild(list);
}

export async function togglePluginTool(
  client: ApiClient,
  sessionId: string,
  current: ToolView[],
  toolId: string,
  enabled: boolean,
): Promise<ToolView[]> {
  const enabledIds = new Set(current.filter((t) => t.enabled).map((t) => t.tool_id));
  if (enabled) enabledIds.add(toolId);
  else enabledIds.delete(toolId);
  return client.setEnabledTools(sessionId, [...enabledIds].sort());
}

export function renderToggleError(container: HTMLElement, message: string): void {
  let banner = container.querySelector<HTMLElement>(".toggle-error");
  if (!banner) {
    banner = document.createElement("div");
    banner.className = "toggle-error";
    container.prepend(banner);
  }
  banner.textContent = message;
}
