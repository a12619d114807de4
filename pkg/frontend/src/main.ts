import { ApiClient } from "./api.js";
import { WebAudioPlayer } from "./audio.js";
import { SessionFlow } from "./flow.js";
import { wireUi } from "./ui.js";

const player = new WebAudioPlayer();
const flow = new SessionFlow({
  api: new ApiClient(""),
  player,
  sleep: (ms) => new Promise((resolve) => setTimeout(resolve, ms)),
  storage: window.localStorage,
});

wireUi(flow, () => player.unlock());
