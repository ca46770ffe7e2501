from functools import lru_cache
from datetime import datetime
import json
import os

from dotenv import load_dotenv
from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine, select
from sqlalchemy.orm import declarative_base, sessionmaker

load_dotenv()

Base = declarative_base()

DEFAULT_DATABASE_URL = "sqlite:///seofp_runs.db"


class Run(Base):
    """One recorded metric of one toolkit command"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    command = Column(String(32), nullable=False)
    model_path = Column(Text)
    bits = Column(Integer)
    encoding = Column(String(16))
    seed = Column(Integer)
    metric_name = Column(String(64), nullable=False)
    metric_value = Column(Float)
    detail = Column(Text)


@lru_cache(maxsize=8)
def _engine(url: str):
    return create_engine(url)


def get_database_engine(database_url: str = None):
    """Get database engine from argument or environment"""
    return _engine(database_url or os.getenv("DATABASE_URL") or DEFAULT_DATABASE_URL)


def get_session(database_url: str = None):
    """Get database session"""
    engine = get_database_engine(database_url)
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    return SessionLocal()


def create_tables(database_url: str = None):
    """Create all tables"""
    engine = get_database_engine(database_url)
    Base.metadata.create_all(bind=engine)


def record_run(command: str, metrics: dict, model_path: str = None, bits: int = None,
               encoding: str = None, seed: int = None, detail: dict = None,
               database_url: str = None) -> int:
    """Store one row per metric; returns the number of rows written"""
    create_tables(database_url)
    with get_session(database_url) as session:
        for name, value in metrics.items():
            session.add(Run(
                command=command,
                model_path=str(model_path) if model_path else None,
                bits=bits,
                encoding=encoding,
                seed=seed,
                metric_name=name,
                metric_value=float(value) if value is not None else None,
                detail=json.dumps(detail, sort_keys=True) if detail else None,
            ))
        session.commit()
    return len(metrics)


def list_runs(command: str = None, limit: int = 50, database_url: str = None) -> list:
    """Most recent runs first"""
    create_tables(database_url)
    with get_session(database_url) as session:
        query = select(Run).order_by(Run.id.desc()).limit(limit)
        if command:
            query = query.where(Run.command == command)
        return [
            {
                "id": run.id,
                "created_at": run.created_at,
                "command": run.command,
                "model_path": run.model_path,
                "bits": run.bits,
                "encoding": run.encoding,
                "seed": run.seed,
                "metric": run.metric_name,
                "value": run.metric_value,
            }
            for run in session.scalars(query)
        ]
