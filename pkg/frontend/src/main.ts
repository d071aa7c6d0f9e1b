// Application assembly: configuration panel (kb, model, mode, language),
// chat box with streaming, plugin toggles for agent sessions, and the SQL
// result view.

import { ApiClient } from "./api.js";
import {
  appendUserMessage,
  applyStreamEvent,
  ChatViewElements,
  renderErrorBanner,
  setInputEnabled,
  startAssistantMessage,
} from "./chatView.js";
import { renderPluginPanel, renderToggleError, togglePluginTool } from "./pluginPanel.js";
import { initialState, renderResultView } from "./resultTable.js";
import { beginStream, endStream, newUiSession, UiSession } from "./session.js";
import type { SessionMode, ToolView } from "./types.js";

const LABELS: Record<string, Record<string, string>> = {
  en: { send: "Send", question: "Ask a question...", tools: "Plugins", config: "Configuration" },
  zh: { send: "发送", question: "请输入问题...", tools: "插件", config: "配置" },
};

export async function bootstrap(root: HTMLElement, baseUrl: string): Promise<void> {
  const client = new ApiClient(baseUrl);
  let language: "en" | "zh" = "en";
  let session: UiSession | null = null;
  let tools: ToolView[] = [];

  root.innerHTML = `
    <header>
      <h1>dbchat</h1>
      <button id="lang-toggle">en/zh</button>
    </header>
    <section id="config-panel">
      <h2 id="config-title">Configuration</h2>
      <select id="mode-picker">
        <option value="rag_qa">knowledge chat</option>
        <option value="text2sql">text-to-SQL</option>
        <option value="agent">agent</option>
      </select>
      <select id="kb-picker"></select>
      <select id="model-picker"></select>
      <input id="db-input" placeholder="database id" value="concert_singer" />
      <button id="new-session">New session</button>
    </section>
    <section id="plugin-panel"></section>
    <section id="messages"></section>
    <section id="result-panel"></section>
    <footer>
      <input id="question" placeholder="Ask a question..." />
      <button id="send">Send</button>
    </footer>
  `;

  const view: ChatViewElements = {
    messages: root.querySelector("#messages")!,
    input: root.querySelector("#question")!,
    send: root.querySelector("#send")!,
  };
  const pluginPanel = root.querySelector<HTMLElement>("#plugin-panel")!;
  const resultPanel = root.querySelector<HTMLElement>("#result-panel")!;
  const modePicker = root.querySelector<HTMLSelectElement>("#mode-picker")!;
  const kbPicker = root.querySelector<HTMLSelectElement>("#kb-picker")!;
  const modelPicker = root.querySelector<HTMLSelectElement>("#model-picker")!;
  const dbInput = root.querySelector<HTMLInputElement>("#db-input")!;

  function applyLanguage(): void {
    const labels = LABELS[language];
    view.send.textContent = labels.send;
    view.input.placeholder = labels.question;
    root.querySelector("#config-title")!.textContent = labels.config;
  }

  root.querySelector("#lang-toggle")!.addEventListener("click", () => {
    language = language === "en" ? "zh" : "en";
    applyLanguage();
  });

  async function refreshPickers(): Promise<void> {
    const [kbs, models] = await Promise.all([client.listKbs(), client.listModels()]);
    kbPicker.innerHTML = kbs
      .map((kb) => `<option value="${kb.name}">${kb.name} (${kb.chunks})</option>`)
      .join("");
    modelPicker.innerHTML = models
      .map((m) => `<option value="${m.model_name}">${m.model_name}</option>`)
      .join("");
  }

  async function refreshTools(): Promise<void> {
    if (!session || session.mode !== "agent") {
      pluginPanel.textContent = "";
      return;
    }
    tools = await client.listTools(session.sessionId);
    renderPluginPanel(pluginPanel, tools, async (toolId, enabled) => {
      try {
        tools = await togglePluginTool(client, session!.sessionId, tools, toolId, enabled);
        await refreshTools();
      } catch (error) {
        renderToggleError(pluginPanel, String(error));
      }
    });
  }

  async function createSession(): Promise<void> {
    const mode = modePicker.value as SessionMode;
    const sessionId = await client.createSession({
      mode,
      kb: mode === "rag_qa" ? kbPicker.value || undefined : undefined,
      db_id: mode !== "rag_qa" ? dbInput.value || undefined : undefined,
      model: mode === "agent" ? "mock-agent" : modelPicker.value || undefined,
      sql_model: mode !== "rag_qa" ? "mock-sql" : undefined,
      role: mode === "agent" ? "data_analyst" : undefined,
    });
    session = newUiSession(sessionId, mode);
    view.messages.textContent = "";
    resultPanel.textContent = "";
    await refreshTools();
  }

  root.querySelector("#new-session")!.addEventListener("click", () => void createSession());

  async function ask(question: string): Promise<void> {
    if (!session) await createSession();
    const active = session!;
    if (!beginStream(active, question)) return;
    appendUserMessage(view, question);
    setInputEnabled(view, false);
    try {
      if (active.mode === "rag_qa") {
        const bubble = startAssistantMessage(view);
        await client.chatStream(active.sessionId, question, (event) =>
          applyStreamEvent(view, bubble, event),
        );
      } else if (active.mode === "text2sql") {
        const response = await client.text2sql(active.sessionId, question);
        renderResultView(
          resultPanel,
          response.sql,
          initialState(response.columns, response.rows),
        );
      } else {
        const episode = await client.agentRun(active.sessionId, question);
        const bubble = startAssistantMessage(view);
        bubble.querySelector(".answer-text")!.textContent = episode.answer;
      }
    } catch (error) {
      const bubble = startAssistantMessage(view);
      renderErrorBanner(bubble, String(error));
    } finally {
      setInputEnabled(view, true);
      const queued = endStream(active);
      if (queued) void ask(queued);
    }
  }

  view.send.addEventListener("click", () => {
    const question = view.input.value.trim();
    if (question) {
      view.input.value = "";
      void ask(question);
    }
  });
  view.input.addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") view.send.click();
  });

  applyLanguage();
  await refreshPickers();
}
