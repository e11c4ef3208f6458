import os
import logging
from dotenv import load_dotenv

# Загружаем переменные окружения
load_dotenv()

LOG_LEVEL = os.getenv('REASONER_LOG_LEVEL', 'INFO').upper()

# Настройка логирования
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def _int_env(name: str, default: str) -> int:
    try:
        return int(os.getenv(name, default))
    except ValueError:
        return -1


def _float_env(name: str, default: str) -> float:
    try:
        return float(os.getenv(name, default))
    except ValueError:
        return -1.0


# Конфигурация из переменных окружения
HORIZON = _int_env('REASONER_HORIZON', '64')
CANONICAL = os.getenv('REASONER_CANONICAL', 'true').lower() == 'true'
INCONSISTENCY_POLICY = os.getenv('REASONER_INCONSISTENCY_POLICY', 'reset').lower()
TRACE_DIR = os.getenv('REASONER_TRACE_DIR', 'traces')
POLL_INTERVAL = _float_env('REASONER_POLL_INTERVAL', '0.5')
MAX_PASSES = _int_env('REASONER_MAX_PASSES', '1000')

# Внешние классификаторы
HTTP_TIMEOUT = _float_env('REASONER_HTTP_TIMEOUT', '10')
HTTP_RETRIES = _int_env('REASONER_HTTP_RETRIES', '3')
PROCESS_TIMEOUT = _float_env('REASONER_PROCESS_TIMEOUT', '10')


def validate_config():
    """Проверка настроек перед запуском"""
    errors = []
    warnings = []

    if LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        warnings.append(f"REASONER_LOG_LEVEL не распознан: {LOG_LEVEL}, используется INFO")

    if HORIZON < 0:
        errors.append("REASONER_HORIZON должен быть целым числом >= 0")
    elif HORIZON > 100000:
        warnings.append("REASONER_HORIZON очень большой - история интерпретаций займёт много памяти")

    if INCONSISTENCY_POLICY not in ('reset', 'halt'):
        errors.append(f"REASONER_INCONSISTENCY_POLICY должен быть reset или halt: {INCONSISTENCY_POLICY}")

    if POLL_INTERVAL <= 0:
        errors.append("REASONER_POLL_INTERVAL должен быть больше 0")
    elif POLL_INTERVAL < 0.05:
        warnings.append("REASONER_POLL_INTERVAL слишком мал (рекомендуется >= 0.05 с)")

    if MAX_PASSES <= 0:
        errors.append("REASONER_MAX_PASSES должен быть больше 0")

    if HTTP_TIMEOUT <= 0:
        errors.append("REASONER_HTTP_TIMEOUT должен быть больше 0")
    if HTTP_RETRIES < 0:
        errors.append("REASONER_HTTP_RETRIES должен быть >= 0")
    if PROCESS_TIMEOUT <= 0:
        errors.append("REASONER_PROCESS_TIMEOUT должен быть больше 0")

    # Выводим ошибки и предупреждения
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")

    if errors:
        for error in errors:
            logger.error(f"❌ {error}")
        return False

    logger.debug(f"✅ Конфигурация валидна: горизонт {HORIZON}, политика {INCONSISTENCY_POLICY}")
    return True
