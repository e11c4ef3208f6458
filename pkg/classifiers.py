import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Union

import aiohttp

from config import HTTP_RETRIES, HTTP_TIMEOUT, PROCESS_TIMEOUT
from logic_lang import ProgramError, parse_fact
from ml_bridge import AdapterError, BridgeError, ClassifierAdapter, InputSource, PredictionEvent, scores_vector

logger = logging.getLogger(__name__)


def _parse_record(record: Any, number: int, source: str) -> PredictionEvent:
    """Проверка одной записи скрипта предсказаний"""
    where = f"{source}:{number}"
    if not isinstance(record, Mapping):
        raise BridgeError(f"{where}: запись должна быть объектом")
    tick = record.get('tick', 0)
    if not isinstance(tick, int) or isinstance(tick, bool) or tick < 0:
        raise BridgeError(f"{where}: 'tick' должен быть целым >= 0")
    target = record.get('target')
    if not isinstance(target, str) or not target:
        raise BridgeError(f"{where}: требуется строковый 'target'")
    scores = record.get('scores', {})
    if not isinstance(scores, Mapping) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in scores.values()):
        raise BridgeError(f"{where}: 'scores' должен отображать классы в числа")
    facts = []
    for text in record.get('facts', []):
        try:
            facts.append(parse_fact(text, fact_id=f"{source}:{number}"))
        except ProgramError as e:
            raise BridgeError(f"{where}: {e}")
    input_id = record.get('input_id')
    return PredictionEvent(target=target, scores=dict(scores), source=source, tick=tick,
                           input_id=None if input_id is None else str(input_id), facts=tuple(facts))


class ScriptedInputSource(InputSource):
    """Входы из JSON lines: {"tick", "target", "scores"}"""

    def __init__(self, events: Iterable[PredictionEvent]):
        self._events = list(events)
        self._position = 0

    @classmethod
    def from_records(cls, records: Iterable[Any], source: str = 'script') -> 'ScriptedInputSource':
        events = [_parse_record(r, i, source) for i, r in enumerate(records, start=1)]
        for previous, event in zip(events, events[1:]):
            if event.tick < previous.tick:
                raise BridgeError(f"{source}: такты должны не убывать ({previous.tick} -> {event.tick})")
        return cls(events)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ScriptedInputSource':
        path = Path(path)
        if not path.is_file():
            raise BridgeError(f"Файл скрипта не найден: {path}")
        records = []
        for number, line in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise BridgeError(f"{path.name}:{number}: некорректный JSON: {e}")
        return cls.from_records(records, source=path.name)

    @property
    def events(self) -> List[PredictionEvent]:
        return list(self._events)

    def remaining(self) -> int:
        return len(self._events) - self._position

    async def next(self) -> Optional[PredictionEvent]:
        if self._position >= len(self._events):
            return None
        event = self._events[self._position]
        self._position += 1
        return event


class ScriptedAdapter(ClassifierAdapter):
    """Оценки берутся прямо из записи скрипта"""

    def __init__(self, class_names: Sequence[str], postprocess: str = 'identity', name: str = ''):
        super().__init__(class_names, postprocess, name)

    async def infer(self, event: PredictionEvent) -> List[float]:
        return scores_vector(event.scores, self.class_names)


def _scores_from_response(data: Any, class_names: Sequence[str], name: str) -> List[float]:
    if not isinstance(data, Mapping) or not isinstance(data.get('scores'), Mapping):
        raise AdapterError(f"{name}: в ответе нет объекта 'scores'")
    try:
        return scores_vector(data['scores'], class_names)
    except (TypeError, ValueError) as e:
        raise AdapterError(f"{name}: некорректные оценки: {e}")


class ExternalProcessAdapter(ClassifierAdapter):
    """Модель во внешнем процессе: строка JSON на запрос и на ответ"""

    def __init__(self, command: Sequence[str], class_names: Sequence[str], postprocess: str = 'softmax',
                 timeout: float = PROCESS_TIMEOUT, name: str = ''):
        super().__init__(class_names, postprocess, name)
        if not command:
            raise BridgeError("Для внешнего процесса нужна команда")
        self.command = list(command)
        self.timeout = timeout
        self._proc: Optional[asyncio.subprocess.Process] = None

    async def _ensure_started(self):
        if self._proc is None or self._proc.returncode is not None:
            try:
                self._proc = await asyncio.create_subprocess_exec(
                    *self.command, stdin=asyncio.subprocess.PIPE, stdout=asyncio.subprocess.PIPE
                )
            except OSError as e:
                raise AdapterError(f"{self.name}: не удалось запустить {self.command[0]}: {e}")
            logger.info(f"🚀 Запущен процесс классификатора {self.name}: pid {self._proc.pid}")

    async def infer(self, event: PredictionEvent) -> List[float]:
        await self._ensure_started()
        input_id = event.input_id if event.input_id is not None else str(event.tick)
        request = json.dumps({'input_id': input_id}) + '\n'
        try:
            self._proc.stdin.write(request.encode('utf-8'))
            await self._proc.stdin.drain()
            line = await asyncio.wait_for(self._proc.stdout.readline(), timeout=self.timeout)
        except asyncio.TimeoutError:
            raise AdapterError(f"{self.name}: нет ответа за {self.timeout} с на {input_id}")
        except (BrokenPipeError, ConnectionResetError) as e:
            raise AdapterError(f"{self.name}: процесс недоступен: {e}")
        if not line:
            raise AdapterError(f"{self.name}: процесс завершился, не ответив на {input_id}")
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise AdapterError(f"{self.name}: ответ не JSON: {e}")
        return _scores_from_response(data, self.class_names, self.name)

    async def close(self):
        if self._proc is None or self._proc.returncode is not None:
            return
        self._proc.stdin.close()
        try:
            await asyncio.wait_for(self._proc.wait(), timeout=self.timeout)
        except asyncio.TimeoutError:
            logger.warning(f"⚠️ Процесс {self.name} не завершился, принудительная остановка")
            self._proc.kill()
            await self._proc.wait()


class HttpAdapter(ClassifierAdapter):
    """Модель на HTTP-сервере: POST {"input_id"} -> {"scores"}"""

    def __init__(self, url: str, class_names: Sequence[str], postprocess: str = 'softmax',
                 timeout: float = HTTP_TIMEOUT, retries: int = HTTP_RETRIES, backoff: float = 1.0,
                 name: str = ''):
        super().__init__(class_names, postprocess, name)
        self.url = url
        self.timeout = timeout
        self.retries = max(0, retries)
        self.backoff = backoff
        self._session: Optional[aiohttp.ClientSession] = None

    async def _get_session(self) -> aiohttp.ClientSession:
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=self.timeout))
        return self._session

    async def infer(self, event: PredictionEvent) -> List[float]:
        session = await self._get_session()
        input_id = event.input_id if event.input_id is not None else str(event.tick)
        attempts = self.retries + 1
        for attempt in range(attempts):
            try:
                async with session.post(self.url, json={'input_id': input_id}) as resp:
                    if resp.status == 429 or resp.status >= 500:
                        # Exponential backoff
                        wait_time = self.backoff * 2 ** attempt
                        logger.warning(f"⏸️ {self.name}: статус {resp.status}, ждем {wait_time} секунд...")
                        if attempt < attempts - 1:
                            await asyncio.sleep(wait_time)
                        continue
                    if resp.status != 200:
                        raise AdapterError(f"{self.name}: сервер вернул статус {resp.status}")
                    try:
                        data = await resp.json(content_type=None)
                    except (json.JSONDecodeError, aiohttp.ContentTypeError) as e:
                        raise AdapterError(f"{self.name}: ответ не JSON: {e}")
                    return _scores_from_response(data, self.class_names, self.name)
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                logger.error(f"💥 {self.name}: ошибка сети при попытке {attempt + 1}: {e}")
                if attempt < attempts - 1:
                    await asyncio.sleep(self.backoff * 2 ** attempt)
        raise AdapterError(f"{self.name}: сервер недоступен после {attempts} попыток")

    async def close(self):
        if self._session is not None and not self._session.closed:
            await self._session.close()


def create_adapter(name: str, spec: Mapping[str, Any]) -> ClassifierAdapter:
    """Адаптер по описанию из сценария"""
    kind = spec.get('kind', 'scripted')
    class_names = spec.get('class_names')
    if not isinstance(class_names, list) or not all(isinstance(c, str) for c in class_names):
        raise BridgeError(f"классификатор '{name}': требуется список 'class_names'")
    if kind == 'scripted':
        return ScriptedAdapter(class_names, spec.get('postprocess', 'identity'), name)
    if kind == 'process':
        command = spec.get('command')
        if isinstance(command, str):
            command = command.split()
        return ExternalProcessAdapter(command or [], class_names, spec.get('postprocess', 'softmax'),
                                      float(spec.get('timeout', PROCESS_TIMEOUT)), name)
    if kind == 'http':
        url = spec.get('url')
        if not isinstance(url, str) or not url.startswith(('http://', 'https://')):
            raise BridgeError(f"классификатор '{name}': требуется http(s) 'url'")
        return HttpAdapter(url, class_names, spec.get('postprocess', 'softmax'),
                           float(spec.get('timeout', HTTP_TIMEOUT)), int(spec.get('retries', HTTP_RETRIES)),
                           name=name)
    raise BridgeError(f"классификатор '{name}': неизвестный вид '{kind}'")
